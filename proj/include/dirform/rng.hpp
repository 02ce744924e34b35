#pragma once

#include <cmath>
#include <cstdint>

namespace dirform {
namespace rng {

/// Counter-based generation: every draw is a pure function of
/// (seed, channel, path, step). Streams are therefore independent of thread
/// schedule, evaluation order, and buffer reuse.

// Channel ids keep the drivers of one path independent of each other.
constexpr std::uint32_t chan_driver = 0;  // B, the driving Brownian motion
constexpr std::uint32_t chan_extra = 1;   // W, the second Brownian motion of the limit law
constexpr std::uint32_t chan_copy = 2;    // the copy-space driver of the tangent equation
constexpr std::uint32_t chan_nested = 3;  // inner paths of nested conditional estimates

struct philox_block {
  std::uint32_t x0, x1, x2, x3;
};

/// Philox4x32-10 keyed permutation.
inline philox_block philox4x32(philox_block ctr, std::uint32_t key0, std::uint32_t key1) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t lo = 0xD2511F53ull * ctr.x0;
    const std::uint64_t hi = 0xCD9E8D57ull * ctr.x2;
    ctr = {static_cast<std::uint32_t>(hi >> 32) ^ ctr.x1 ^ key0,
           static_cast<std::uint32_t>(hi),
           static_cast<std::uint32_t>(lo >> 32) ^ ctr.x3 ^ key1,
           static_cast<std::uint32_t>(lo)};
    key0 += 0x9E3779B9u;
    key1 += 0xBB67AE85u;
  }
  return ctr;
}

/// Maps 64 random bits to the open interval (0,1); never returns 0 or 1.
inline double uniform01(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Inverse of the standard normal distribution function (Wichura's PPND16
/// rational approximations, relative error below 1e-15 on (0,1)).
inline double inverse_normal_cdf(double p) {
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                             6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                           1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                         1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                             3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                           5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                         4.2313330701600911252e1) * r + 1.0);
    return q * num / den;
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double x;
  if (r <= 5.0) {
    r -= 1.6;
    const double num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                             2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                           3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                         4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                             1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                           6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                         2.05319162663775882187e0) * r + 1.0);
    x = num / den;
  } else {
    r -= 5.0;
    const double num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                             1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                           2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                         5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r +
                             1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
                           1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                         5.99832206555887937690e-1) * r + 1.0);
    x = num / den;
  }
  return q < 0.0 ? -x : x;
}

/// One standard normal variate for position (path, step) of a channel.
inline double normal_draw(std::uint64_t seed, std::uint32_t channel, std::uint64_t path,
                          std::uint64_t step) {
  const philox_block ctr{static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                         static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)};
  const std::uint32_t key0 = static_cast<std::uint32_t>(seed);
  const std::uint32_t key1 = static_cast<std::uint32_t>(seed >> 32) ^ (0x85EBCA6Bu * channel);
  const philox_block out = philox4x32(ctr, key0, key1);
  const std::uint64_t bits = (static_cast<std::uint64_t>(out.x0) << 32) | out.x1;
  return inverse_normal_cdf(uniform01(bits));
}

}  // namespace rng
}  // namespace dirform
