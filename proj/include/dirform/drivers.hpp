#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirform/rng.hpp"

namespace dirform {

/// A path sampled on a uniform grid; times and values both have n+1 entries.
struct PathGrid {
  std::vector<double> times;
  std::vector<double> values;
};

inline std::vector<double> uniform_times(std::int64_t n, double horizon) {
  std::vector<double> t(static_cast<std::size_t>(n) + 1);
  const double dt = horizon / static_cast<double>(n);
  for (std::int64_t k = 0; k <= n; ++k) t[static_cast<std::size_t>(k)] = dt * static_cast<double>(k);
  return t;
}

enum class driver_set : unsigned {
  driver = 1u,
  extra = 2u,
  copy = 4u,
  driver_extra = 3u,
  driver_copy = 5u,
  all = 7u,
};

inline bool has_channel(driver_set s, driver_set flag) {
  return (static_cast<unsigned>(s) & static_cast<unsigned>(flag)) != 0u;
}

/// Fine-grid increments of the coupled noises of one simulated path.
/// Coarse increments are block sums of the fine ones, so coarse and fine
/// schemes ride the same Brownian motion bit for bit.
struct DriverPaths {
  std::int64_t n = 0;
  std::int64_t refine = 1;
  std::int64_t n_fine = 0;
  double horizon = 1.0;
  std::uint64_t seed = 0;
  std::int64_t path_index = 0;
  std::vector<double> db;     // driving Brownian motion B
  std::vector<double> dw;     // extra Brownian motion W of the limit law
  std::vector<double> dbhat;  // copy-space driver of the tangent equation

  double dt_fine() const { return horizon / static_cast<double>(n_fine); }
  double dt_coarse() const { return horizon / static_cast<double>(n); }
};

namespace detail {

inline void require_channel(const std::vector<double>& inc, const DriverPaths& drv,
                            const char* name) {
  if (inc.size() != static_cast<std::size_t>(drv.n_fine))
    throw std::invalid_argument(std::string("missing driver channel: ") + name);
}

}  // namespace detail

inline void check_grid(std::int64_t n, std::int64_t refine) {
  if (n < 1 || refine < 1)
    throw std::invalid_argument("make_drivers: n and refine must be >= 1");
  if (refine > (std::int64_t{1} << 31) / n)
    throw std::overflow_error("make_drivers: n * refine exceeds the step budget");
}

inline void fill_channel(std::vector<double>& out, std::int64_t n_fine, double dt,
                         std::uint64_t seed, std::uint32_t channel, std::int64_t path_index,
                         std::int64_t step_offset = 0) {
  out.resize(static_cast<std::size_t>(n_fine));
  const double root_dt = std::sqrt(dt);
  for (std::int64_t k = 0; k < n_fine; ++k)
    out[static_cast<std::size_t>(k)] =
        root_dt * rng::normal_draw(seed, channel, static_cast<std::uint64_t>(path_index),
                                   static_cast<std::uint64_t>(step_offset + k));
}

inline DriverPaths make_drivers(std::int64_t n, std::int64_t refine, std::uint64_t seed,
                                std::int64_t path_index = 0, double horizon = 1.0,
                                driver_set which = driver_set::all) {
  check_grid(n, refine);
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw std::invalid_argument("make_drivers: horizon must be positive");
  if (path_index < 0) throw std::invalid_argument("make_drivers: path_index must be >= 0");
  DriverPaths d;
  d.n = n;
  d.refine = refine;
  d.n_fine = n * refine;
  d.horizon = horizon;
  d.seed = seed;
  d.path_index = path_index;
  const double dt = d.dt_fine();
  if (has_channel(which, driver_set::driver))
    fill_channel(d.db, d.n_fine, dt, seed, rng::chan_driver, path_index);
  if (has_channel(which, driver_set::extra))
    fill_channel(d.dw, d.n_fine, dt, seed, rng::chan_extra, path_index);
  if (has_channel(which, driver_set::copy))
    fill_channel(d.dbhat, d.n_fine, dt, seed, rng::chan_copy, path_index);
  return d;
}

/// Redraws the copy-space channel in place; replica 0 reproduces the channel
/// make_drivers created.
inline void regenerate_copy(DriverPaths& d, std::int64_t replica) {
  if (replica < 0) throw std::invalid_argument("regenerate_copy: replica must be >= 0");
  fill_channel(d.dbhat, d.n_fine, d.dt_fine(), d.seed, rng::chan_copy, d.path_index,
               replica * d.n_fine);
}

/// Sums fine increments left to right inside each coarse block.
inline std::vector<double> coarse_increments(const std::vector<double>& fine,
                                             std::int64_t refine) {
  if (refine < 1 || fine.size() % static_cast<std::size_t>(refine) != 0)
    throw std::invalid_argument("coarse_increments: refine does not divide the grid");
  const std::size_t n = fine.size() / static_cast<std::size_t>(refine);
  std::vector<double> out(n);
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::int64_t r = 0; r < refine; ++r) s += fine[j++];
    out[k] = s;
  }
  return out;
}

/// Path values from increments: out[0] = 0, out[k+1] = out[k] + inc[k].
inline std::vector<double> cumulative(const std::vector<double>& increments) {
  std::vector<double> out(increments.size() + 1);
  out[0] = 0.0;
  for (std::size_t k = 0; k < increments.size(); ++k) out[k + 1] = out[k] + increments[k];
  return out;
}

/// Every refine-th value of a fine-grid path, endpoints included.
inline std::vector<double> subsample(const std::vector<double>& fine_values,
                                     std::int64_t refine) {
  if (refine < 1 || (fine_values.size() - 1) % static_cast<std::size_t>(refine) != 0)
    throw std::invalid_argument("subsample: refine does not divide the grid");
  const std::size_t n = (fine_values.size() - 1) / static_cast<std::size_t>(refine);
  std::vector<double> out(n + 1);
  for (std::size_t k = 0; k <= n; ++k) out[k] = fine_values[k * static_cast<std::size_t>(refine)];
  return out;
}

}  // namespace dirform
