#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirform/drivers.hpp"

namespace dirform {

using coeff_fn = std::function<double(double, double)>;

struct LognormalParams {
  double sigma = 0.0;
  double rate = 0.0;
};

/// Coefficients of dX = a(X,t) dB + b(X,t) dt on [0, horizon], with the
/// x-derivatives the error analysis needs. `lognormal` marks specs whose
/// exact marginal law is lognormal, enabling an exact reference path.
struct SdeSpec {
  coeff_fn a;
  coeff_fn b;
  coeff_fn a_x;
  coeff_fn b_x;
  coeff_fn a_xx;
  double x0 = 0.0;
  double horizon = 1.0;
  std::optional<LognormalParams> lognormal;
};

struct blow_up_error : std::runtime_error {
  std::int64_t step;
  explicit blow_up_error(std::int64_t k)
      : std::runtime_error("euler step produced a non-finite state at step " + std::to_string(k)),
        step(k) {}
};

struct ProbeGrid {
  std::vector<double> xs;
  std::vector<double> ts;
};

/// Multiplicative probes around x0 stay inside the domain of level models.
inline ProbeGrid default_probes(const SdeSpec& spec) {
  ProbeGrid g;
  const double base = spec.x0 == 0.0 ? 1.0 : spec.x0;
  for (double f : {0.6, 0.85, 1.0, 1.25, 1.6}) g.xs.push_back(base * f);
  for (double f : {0.0, 0.25, 0.5, 0.75, 1.0}) g.ts.push_back(spec.horizon * f);
  return g;
}

namespace detail {

inline void check_derivative(const coeff_fn& f, const coeff_fn& df, double x, double t,
                             const char* label) {
  const double h = 6e-6 * std::max(1.0, std::abs(x));
  const double fd = (f(x + h, t) - f(x - h, t)) / (2.0 * h);
  const double d = df(x, t);
  if (!std::isfinite(fd) || !std::isfinite(d) ||
      std::abs(fd - d) > 1e-5 * std::max({1.0, std::abs(fd), std::abs(d)}))
    throw std::invalid_argument(std::string("validate_spec: ") + label +
                                " disagrees with finite differences at x=" + std::to_string(x) +
                                " t=" + std::to_string(t));
}

inline void check_second_derivative(const coeff_fn& f, const coeff_fn& d2f, double x, double t,
                                    const char* label) {
  const double h = 1.5e-4 * std::max(1.0, std::abs(x));
  const double fd = (f(x + h, t) - 2.0 * f(x, t) + f(x - h, t)) / (h * h);
  const double d = d2f(x, t);
  if (!std::isfinite(fd) || !std::isfinite(d) ||
      std::abs(fd - d) > 1e-5 * std::max({1.0, std::abs(fd), std::abs(d)}))
    throw std::invalid_argument(std::string("validate_spec: ") + label +
                                " disagrees with finite differences at x=" + std::to_string(x) +
                                " t=" + std::to_string(t));
}

}  // namespace detail

/// Checks the supplied derivatives against central differences and fits the
/// linear-growth constant over the probe grid; throws on any violation.
inline void validate_spec(const SdeSpec& spec, const ProbeGrid& probes) {
  if (!spec.a || !spec.b || !spec.a_x || !spec.b_x || !spec.a_xx)
    throw std::invalid_argument("validate_spec: all five coefficient callables are required");
  if (!(spec.horizon > 0.0) || !std::isfinite(spec.horizon) || !std::isfinite(spec.x0))
    throw std::invalid_argument("validate_spec: bad x0 or horizon");
  double growth = 0.0;
  for (double x : probes.xs)
    for (double t : probes.ts) {
      detail::check_derivative(spec.a, spec.a_x, x, t, "a_x");
      detail::check_derivative(spec.b, spec.b_x, x, t, "b_x");
      detail::check_second_derivative(spec.a, spec.a_xx, x, t, "a_xx");
      growth = std::max(growth, (std::abs(spec.a(x, t)) + std::abs(spec.b(x, t))) /
                                    (1.0 + std::abs(x)));
    }
  if (!std::isfinite(growth))
    throw std::invalid_argument("validate_spec: linear growth constant is not finite");
}

inline void validate_spec(const SdeSpec& spec) { validate_spec(spec, default_probes(spec)); }

namespace detail {

inline void check_horizon(const SdeSpec& spec, const DriverPaths& drv) {
  if (std::abs(spec.horizon - drv.horizon) > 1e-12 * std::max(1.0, std::abs(spec.horizon)))
    throw std::invalid_argument("sde/driver horizon mismatch");
}

/// Euler recursion with coefficients frozen at the left endpoint.
inline std::vector<double> euler_values(const SdeSpec& spec, const std::vector<double>& db,
                                        double dt) {
  std::vector<double> x(db.size() + 1);
  x[0] = spec.x0;
  double t = 0.0;
  for (std::size_t k = 0; k < db.size(); ++k) {
    x[k + 1] = x[k] + spec.a(x[k], t) * db[k] + spec.b(x[k], t) * dt;
    if (!std::isfinite(x[k + 1])) throw blow_up_error(static_cast<std::int64_t>(k));
    t += dt;
  }
  return x;
}

}  // namespace detail

/// Euler scheme on the coarse grid (n steps of the driver's coarse blocks).
inline PathGrid euler_path(const SdeSpec& spec, const DriverPaths& drv) {
  detail::check_horizon(spec, drv);
  PathGrid out;
  out.times = uniform_times(drv.n, drv.horizon);
  out.values = detail::euler_values(spec, coarse_increments(drv.db, drv.refine), drv.dt_coarse());
  return out;
}

/// Euler scheme on the fine grid; values have n_fine + 1 entries.
inline std::vector<double> fine_euler_values(const SdeSpec& spec, const DriverPaths& drv) {
  detail::check_horizon(spec, drv);
  return detail::euler_values(spec, drv.db, drv.dt_fine());
}

/// Reference solution on the fine grid: the exact lognormal map of B where
/// the spec declares one (and use_exact is set), fine Euler otherwise.
inline std::vector<double> reference_fine_values(const SdeSpec& spec, const DriverPaths& drv,
                                                 bool use_exact = true) {
  detail::check_horizon(spec, drv);
  if (use_exact && spec.lognormal) {
    const double sig = spec.lognormal->sigma;
    const double mu = spec.lognormal->rate - 0.5 * sig * sig;
    const double dt = drv.dt_fine();
    std::vector<double> x(static_cast<std::size_t>(drv.n_fine) + 1);
    x[0] = spec.x0;
    double bsum = 0.0;
    for (std::int64_t k = 1; k <= drv.n_fine; ++k) {
      bsum += drv.db[static_cast<std::size_t>(k - 1)];
      x[static_cast<std::size_t>(k)] =
          spec.x0 * std::exp(mu * dt * static_cast<double>(k) + sig * bsum);
    }
    return x;
  }
  return fine_euler_values(spec, drv);
}

/// Reference path subsampled to the coarse grid.
inline PathGrid reference_path(const SdeSpec& spec, const DriverPaths& drv,
                               bool use_exact = true) {
  PathGrid out;
  out.times = uniform_times(drv.n, drv.horizon);
  out.values = subsample(reference_fine_values(spec, drv, use_exact), drv.refine);
  return out;
}

/// sqrt(n) * (coarse Euler - reference) on the coarse grid.
inline PathGrid scaled_error_path(const SdeSpec& spec, const DriverPaths& drv,
                                  bool use_exact = true) {
  PathGrid euler = euler_path(spec, drv);
  const std::vector<double> ref = subsample(reference_fine_values(spec, drv, use_exact), drv.refine);
  const double root_n = std::sqrt(static_cast<double>(drv.n));
  for (std::size_t k = 0; k < euler.values.size(); ++k)
    euler.values[k] = root_n * (euler.values[k] - ref[k]);
  return euler;
}

}  // namespace dirform
