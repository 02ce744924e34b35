#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "dirform/sde.hpp"

namespace dirform {

/// Joint fine-grid sample of the state X, the asymptotic error process U,
/// and the first-variation process M (always positive, exponential form).
struct LimitPair {
  PathGrid x;
  PathGrid u;
  std::vector<double> m;
};

namespace detail {

/// First variation along a fine-grid state path,
/// M_t = exp{int a_x dB - 1/2 int a_x^2 ds + int b_x ds}.
inline std::vector<double> first_variation_values(const SdeSpec& spec,
                                                  const std::vector<double>& x,
                                                  const DriverPaths& drv) {
  const double dt = drv.dt_fine();
  std::vector<double> m(x.size());
  m[0] = 1.0;
  double logm = 0.0, t = 0.0;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) {
    const double ax = spec.a_x(x[k], t);
    const double bx = spec.b_x(x[k], t);
    logm += ax * drv.db[k] + (bx - 0.5 * ax * ax) * dt;
    m[k + 1] = std::exp(logm);
    if (!std::isfinite(m[k + 1]) || m[k + 1] <= 0.0)
      throw std::runtime_error("first variation left (0, inf) at step " + std::to_string(k));
    t += dt;
  }
  return m;
}

}  // namespace detail

/// Euler scheme for the limit error equation
///   dU = a_x(X,t) U dB + b_x(X,t) U dt + a_x(X,t) a(X,t) / sqrt(2) dW,
/// driven by the same B as the state and an independent W.
inline LimitPair simulate_limit_pair(const SdeSpec& spec, const DriverPaths& drv,
                                     bool use_exact_reference = true) {
  detail::check_horizon(spec, drv);
  detail::require_channel(drv.db, drv, "driver");
  detail::require_channel(drv.dw, drv, "extra");
  const double dt = drv.dt_fine();
  const double inv_root2 = 0.7071067811865475244;

  LimitPair out;
  out.x.times = uniform_times(drv.n_fine, drv.horizon);
  out.x.values = reference_fine_values(spec, drv, use_exact_reference);
  out.u.times = out.x.times;
  out.u.values.assign(out.x.values.size(), 0.0);
  out.m = detail::first_variation_values(spec, out.x.values, drv);

  double t = 0.0;
  for (std::size_t k = 0; k + 1 < out.x.values.size(); ++k) {
    const double xk = out.x.values[k];
    const double uk = out.u.values[k];
    const double ax = spec.a_x(xk, t);
    out.u.values[k + 1] = uk + ax * uk * drv.db[k] + spec.b_x(xk, t) * uk * dt +
                          inv_root2 * ax * spec.a(xk, t) * drv.dw[k];
    if (!std::isfinite(out.u.values[k + 1]))
      throw blow_up_error(static_cast<std::int64_t>(k));
    t += dt;
  }
  return out;
}

/// Closed-form solution of the limit error equation by variation of
/// constants: U_t = M_t int_0^t a(X,s) a_x(X,s) / (sqrt(2) M_s) dW_s.
inline PathGrid variation_of_constants(const SdeSpec& spec, const DriverPaths& drv,
                                       bool use_exact_reference = true) {
  detail::check_horizon(spec, drv);
  detail::require_channel(drv.db, drv, "driver");
  detail::require_channel(drv.dw, drv, "extra");
  const double dt = drv.dt_fine();
  const double inv_root2 = 0.7071067811865475244;

  const std::vector<double> x = reference_fine_values(spec, drv, use_exact_reference);
  const std::vector<double> m = detail::first_variation_values(spec, x, drv);

  PathGrid out;
  out.times = uniform_times(drv.n_fine, drv.horizon);
  out.values.assign(x.size(), 0.0);
  double integral = 0.0, t = 0.0;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) {
    integral += spec.a(x[k], t) * spec.a_x(x[k], t) / m[k] * inv_root2 * drv.dw[k];
    out.values[k + 1] = m[k + 1] * integral;
    t += dt;
  }
  return out;
}

/// An integrand f(x, s) of a Brownian integral, with its x-derivative.
struct SurfaceFn {
  std::function<double(double, double)> value;
  std::function<double(double, double)> deriv_x;
};

/// Scaled Euler error of int f(B,s) dB against the fine-grid integral,
/// paired with a sample of the limit law (1/sqrt(2)) int f_x(B,s) dW.
struct RootzenSample {
  double scaled_error = 0.0;
  double limit_sample = 0.0;
};

inline RootzenSample rootzen_error(const SurfaceFn& f, const DriverPaths& drv) {
  if (!f.value || !f.deriv_x)
    throw std::invalid_argument("rootzen_error: value and deriv_x are required");
  detail::require_channel(drv.db, drv, "driver");
  detail::require_channel(drv.dw, drv, "extra");
  for (double probe : {0.0, 0.5}) {
    const double h = 6e-6;
    const double fd =
        (f.value(probe + h, probe * drv.horizon) - f.value(probe - h, probe * drv.horizon)) /
        (2.0 * h);
    const double d = f.deriv_x(probe, probe * drv.horizon);
    if (std::abs(fd - d) > 1e-5 * std::max({1.0, std::abs(fd), std::abs(d)}))
      throw std::invalid_argument("rootzen_error: deriv_x disagrees with finite differences");
  }

  const double dt = drv.dt_fine();
  const double inv_root2 = 0.7071067811865475244;
  const std::int64_t refine = drv.refine;
  RootzenSample out;

  // The coarse minus fine difference is accumulated per fine step, so a
  // state-free integrand cancels bit for bit.
  double b = 0.0, err = 0.0, limit = 0.0;
  std::size_t j = 0;
  for (std::int64_t k = 0; k < drv.n; ++k) {
    const double t_coarse = drv.dt_coarse() * static_cast<double>(k);
    const double f_coarse = f.value(b, t_coarse);
    for (std::int64_t r = 0; r < refine; ++r, ++j) {
      const double s = dt * static_cast<double>(j);
      err += (f_coarse - f.value(b, s)) * drv.db[j];
      limit += f.deriv_x(b, s) * drv.dw[j];
      b += drv.db[j];
    }
  }
  out.scaled_error = std::sqrt(static_cast<double>(drv.n)) * err;
  out.limit_sample = inv_root2 * limit;
  return out;
}

}  // namespace dirform
