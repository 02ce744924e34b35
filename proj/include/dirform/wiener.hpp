#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirform/parallel.hpp"
#include "dirform/sde.hpp"
#include "dirform/stats.hpp"

namespace dirform {

struct weight_floor_error : std::runtime_error {
  double time;
  explicit weight_floor_error(double t)
      : std::runtime_error("weight fell below its floor at t = " + std::to_string(t)), time(t) {}
};

/// Weight of the error structure on Wiener space: a deterministic alpha(t)
/// or the adapted alpha = a_x(x,t)^2 / 2 induced by an SDE. Sampling below
/// the floor is a hard error, so degenerate weights cannot pass silently.
struct WeightProcess {
  enum class Kind { deterministic, adapted };
  Kind kind = Kind::deterministic;
  std::function<double(double)> of_t;
  std::function<double(double, double)> of_xt;
  std::function<double(double)> floor = [](double) { return 1e-8; };

  double sample(double x, double t) const {
    const double a = kind == Kind::deterministic ? of_t(t) : of_xt(x, t);
    if (!(a >= floor(t)) || !std::isfinite(a)) throw weight_floor_error(t);
    return a;
  }
};

inline WeightProcess deterministic_weight(std::function<double(double)> alpha) {
  WeightProcess w;
  w.kind = WeightProcess::Kind::deterministic;
  w.of_t = std::move(alpha);
  return w;
}

/// The weight under which the tangent process reproduces the Euler limit law.
inline WeightProcess adapted_weight(const SdeSpec& spec) {
  WeightProcess w;
  w.kind = WeightProcess::Kind::adapted;
  w.of_xt = [ax = spec.a_x](double x, double t) {
    const double d = ax(x, t);
    return 0.5 * d * d;
  };
  return w;
}

/// Fine-grid state path with its tangent process and weight samples.
struct TangentPath {
  PathGrid x;
  PathGrid x_sharp;
  std::vector<double> alpha;       // left-point samples, one per fine step
  std::vector<double> root_alpha;  // sqrt(alpha), same layout
};

namespace detail {

/// Per-step coefficients of the tangent recursion
///   xs_{k+1} = xs_k * growth_k + inject_k * dbhat_k.
struct TangentCoeffs {
  std::vector<double> growth;
  std::vector<double> inject;
};

inline TangentCoeffs tangent_coeffs(const SdeSpec& spec, const std::vector<double>& x,
                                    const std::vector<double>& alpha,
                                    const DriverPaths& drv) {
  const double dt = drv.dt_fine();
  TangentCoeffs c;
  c.growth.resize(static_cast<std::size_t>(drv.n_fine));
  c.inject.resize(static_cast<std::size_t>(drv.n_fine));
  double t = 0.0;
  for (std::size_t k = 0; k < c.growth.size(); ++k) {
    c.growth[k] = 1.0 + spec.a_x(x[k], t) * drv.db[k] + spec.b_x(x[k], t) * dt;
    c.inject[k] = spec.a(x[k], t) * std::sqrt(alpha[k]);
    t += dt;
  }
  return c;
}

inline std::vector<double> sharp_values(const TangentCoeffs& c,
                                        const std::vector<double>& dbhat) {
  std::vector<double> xs(c.growth.size() + 1);
  xs[0] = 0.0;
  for (std::size_t k = 0; k < c.growth.size(); ++k)
    xs[k + 1] = xs[k] * c.growth[k] + c.inject[k] * dbhat[k];
  return xs;
}

inline std::vector<double> weight_samples(const WeightProcess& w, const std::vector<double>& x,
                                          const DriverPaths& drv) {
  const double dt = drv.dt_fine();
  std::vector<double> alpha(static_cast<std::size_t>(drv.n_fine));
  for (std::size_t k = 0; k < alpha.size(); ++k)
    alpha[k] = w.sample(x[k], dt * static_cast<double>(k));
  return alpha;
}

}  // namespace detail

/// Simulates the tangent equation
///   dX# = a_x(X,t) X# dB + b_x(X,t) X# dt + a(X,t) sqrt(alpha) dBhat
/// along the state path of drv. Under the adapted weight, X# has the law of
/// the Euler error limit.
inline TangentPath simulate_tangent(const SdeSpec& spec, const WeightProcess& w,
                                    const DriverPaths& drv, bool use_exact_reference = true) {
  detail::check_horizon(spec, drv);
  detail::require_channel(drv.db, drv, "driver");
  detail::require_channel(drv.dbhat, drv, "copy");
  TangentPath tp;
  tp.x.times = uniform_times(drv.n_fine, drv.horizon);
  tp.x.values = reference_fine_values(spec, drv, use_exact_reference);
  tp.alpha = detail::weight_samples(w, tp.x.values, drv);
  tp.root_alpha.resize(tp.alpha.size());
  for (std::size_t k = 0; k < tp.alpha.size(); ++k) tp.root_alpha[k] = std::sqrt(tp.alpha[k]);
  tp.x_sharp.times = tp.x.times;
  tp.x_sharp.values = detail::sharp_values(detail::tangent_coeffs(spec, tp.x.values, tp.alpha, drv),
                                           drv.dbhat);
  return tp;
}

/// A path functional with its linearization: value reads the state path,
/// sharp reads the tangent path alongside it.
struct PathFunctional {
  std::string name;
  std::function<double(const TangentPath&, const DriverPaths&)> value;
  std::function<double(const TangentPath&, const DriverPaths&)> sharp;
};

/// f(X_t) at the grid point nearest time_fraction * horizon.
inline PathFunctional terminal_functional(std::function<double(double)> f,
                                          std::function<double(double)> df,
                                          double time_fraction = 1.0,
                                          std::string name = "terminal") {
  if (!(time_fraction > 0.0 && time_fraction <= 1.0))
    throw std::invalid_argument("terminal_functional: time_fraction must be in (0, 1]");
  PathFunctional pf;
  pf.name = std::move(name);
  auto index = [time_fraction](const TangentPath& tp) {
    return static_cast<std::size_t>(
        std::llround(time_fraction * static_cast<double>(tp.x.values.size() - 1)));
  };
  pf.value = [f = std::move(f), index](const TangentPath& tp, const DriverPaths&) {
    return f(tp.x.values[index(tp)]);
  };
  pf.sharp = [df = std::move(df), index](const TangentPath& tp, const DriverPaths&) {
    const std::size_t i = index(tp);
    return df(tp.x.values[i]) * tp.x_sharp.values[i];
  };
  return pf;
}

/// int h(s) dB_s with deterministic h; its sharp is int h sqrt(alpha) dBhat.
inline PathFunctional brownian_integral_functional(std::function<double(double)> h,
                                                   std::string name = "brownian-integral") {
  PathFunctional pf;
  pf.name = std::move(name);
  auto hh = std::make_shared<std::function<double(double)>>(std::move(h));
  pf.value = [hh](const TangentPath& tp, const DriverPaths& drv) {
    const double dt = drv.dt_fine();
    double s = 0.0;
    for (std::size_t k = 0; k < drv.db.size(); ++k)
      s += (*hh)(dt * static_cast<double>(k)) * drv.db[k];
    return s;
  };
  pf.sharp = [hh](const TangentPath& tp, const DriverPaths& drv) {
    const double dt = drv.dt_fine();
    double s = 0.0;
    for (std::size_t k = 0; k < drv.dbhat.size(); ++k)
      s += (*hh)(dt * static_cast<double>(k)) * tp.root_alpha[k] * drv.dbhat[k];
    return s;
  };
  return pf;
}

/// int f(X,s) dX with the product-rule linearization
///   sharp = int f_x(X,s) X# dX + int f(X,s) dX#.
inline PathFunctional state_integral_functional(std::function<double(double, double)> f,
                                                std::function<double(double, double)> f_x,
                                                std::string name = "state-integral") {
  PathFunctional pf;
  pf.name = std::move(name);
  auto ff = std::make_shared<std::function<double(double, double)>>(std::move(f));
  auto ffx = std::make_shared<std::function<double(double, double)>>(std::move(f_x));
  pf.value = [ff](const TangentPath& tp, const DriverPaths& drv) {
    const double dt = drv.dt_fine();
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < tp.x.values.size(); ++k)
      s += (*ff)(tp.x.values[k], dt * static_cast<double>(k)) *
           (tp.x.values[k + 1] - tp.x.values[k]);
    return s;
  };
  pf.sharp = [ff, ffx](const TangentPath& tp, const DriverPaths& drv) {
    const double dt = drv.dt_fine();
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < tp.x.values.size(); ++k) {
      const double t = dt * static_cast<double>(k);
      s += (*ffx)(tp.x.values[k], t) * tp.x_sharp.values[k] *
               (tp.x.values[k + 1] - tp.x.values[k]) +
           (*ff)(tp.x.values[k], t) * (tp.x_sharp.values[k + 1] - tp.x_sharp.values[k]);
    }
    return s;
  };
  return pf;
}

/// Sharp of int xi dB for an adapted integrand sampled on the fine grid:
///   (int xi dB)^# = int xi^# dB + int xi sqrt(alpha) dBhat.
inline double sharp_of_integral(std::span<const double> xi, std::span<const double> xi_sharp,
                                std::span<const double> root_alpha, const DriverPaths& drv) {
  const std::size_t n = static_cast<std::size_t>(drv.n_fine);
  if (xi.size() != n || xi_sharp.size() != n || root_alpha.size() != n)
    throw std::invalid_argument("sharp_of_integral: integrand must be sampled per fine step");
  detail::require_channel(drv.db, drv, "driver");
  detail::require_channel(drv.dbhat, drv, "copy");
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    s += xi_sharp[k] * drv.db[k] + xi[k] * root_alpha[k] * drv.dbhat[k];
  return s;
}

/// Finite perturbation of the driver channel under a deterministic weight:
///   dB -> e^{-alpha(t) eps/2} dB + sqrt(1 - e^{-alpha(t) eps}) dBhat.
inline std::vector<double> perturb_path(const DriverPaths& drv, double eps,
                                        const WeightProcess& w) {
  if (w.kind != WeightProcess::Kind::deterministic)
    throw std::invalid_argument("perturb_path: only deterministic weights define a finite flow");
  if (!(eps >= 0.0) || !std::isfinite(eps))
    throw std::invalid_argument("perturb_path: eps must be >= 0");
  detail::require_channel(drv.db, drv, "driver");
  detail::require_channel(drv.dbhat, drv, "copy");
  const double dt = drv.dt_fine();
  std::vector<double> out(drv.db.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double a = w.sample(0.0, dt * static_cast<double>(k));
    out[k] = std::exp(-0.5 * a * eps) * drv.db[k] +
             std::sqrt(1.0 - std::exp(-a * eps)) * drv.dbhat[k];
  }
  return out;
}

/// Monte Carlo budget for path-ensemble estimators.
struct EnsembleSpec {
  std::int64_t n = 64;
  std::int64_t refine = 16;
  std::int64_t n_paths = 1000;
  std::uint64_t seed = 0;
  double horizon = 1.0;
  int threads = 0;
  bool use_exact_reference = true;
};

/// Ehat[(F^#)^2] over fresh (B, Bhat) pairs: the unconditional Gamma[F] mean.
inline Estimate gamma_estimate(const SdeSpec& spec, const WeightProcess& w,
                               const PathFunctional& f, const EnsembleSpec& ens) {
  if (ens.n_paths < 2) throw std::invalid_argument("gamma_estimate: need at least 2 paths");
  std::vector<double> samples(static_cast<std::size_t>(ens.n_paths));
  parallel_for(ens.n_paths, ens.threads, [&](std::int64_t i) {
    const DriverPaths drv = make_drivers(ens.n, ens.refine, ens.seed, i, ens.horizon,
                                         driver_set::driver_copy);
    const TangentPath tp = simulate_tangent(spec, w, drv, ens.use_exact_reference);
    const double y = f.sharp(tp, drv);
    samples[static_cast<std::size_t>(i)] = y * y;
  });
  return mean_stderr(samples, ens.seed);
}

/// Ehat[(F^#)^2 | B] with the state path of drv held fixed and the copy
/// channel resampled n_replicas times. drv leaves with replica 0 restored.
inline Estimate gamma_conditional(const SdeSpec& spec, const WeightProcess& w,
                                  const PathFunctional& f, DriverPaths& drv,
                                  std::int64_t n_replicas = 64,
                                  bool use_exact_reference = true) {
  if (n_replicas < 2) throw std::invalid_argument("gamma_conditional: need at least 2 replicas");
  detail::require_channel(drv.db, drv, "driver");
  TangentPath tp;
  tp.x.times = uniform_times(drv.n_fine, drv.horizon);
  tp.x.values = reference_fine_values(spec, drv, use_exact_reference);
  tp.alpha = detail::weight_samples(w, tp.x.values, drv);
  tp.root_alpha.resize(tp.alpha.size());
  for (std::size_t k = 0; k < tp.alpha.size(); ++k) tp.root_alpha[k] = std::sqrt(tp.alpha[k]);
  const detail::TangentCoeffs coeffs = detail::tangent_coeffs(spec, tp.x.values, tp.alpha, drv);
  tp.x_sharp.times = tp.x.times;

  std::vector<double> samples(static_cast<std::size_t>(n_replicas));
  for (std::int64_t r = 0; r < n_replicas; ++r) {
    regenerate_copy(drv, r);
    tp.x_sharp.values = detail::sharp_values(coeffs, drv.dbhat);
    const double y = f.sharp(tp, drv);
    samples[static_cast<std::size_t>(r)] = y * y;
  }
  regenerate_copy(drv, 0);
  return mean_stderr(samples, drv.seed);
}

/// Integration by parts pair of the weighted structure:
///   lhs = E[F^# int h sqrt(alpha) dBhat],  rhs = E[F int h alpha dB].
struct IbpResult {
  Estimate lhs;
  Estimate rhs;
};

inline IbpResult ibp_pair(const SdeSpec& spec, const WeightProcess& w, const PathFunctional& f,
                          std::function<double(double)> h, const EnsembleSpec& ens) {
  if (ens.n_paths < 2) throw std::invalid_argument("ibp_pair: need at least 2 paths");
  std::vector<double> lhs(static_cast<std::size_t>(ens.n_paths));
  std::vector<double> rhs(static_cast<std::size_t>(ens.n_paths));
  parallel_for(ens.n_paths, ens.threads, [&](std::int64_t i) {
    const DriverPaths drv = make_drivers(ens.n, ens.refine, ens.seed, i, ens.horizon,
                                         driver_set::driver_copy);
    const TangentPath tp = simulate_tangent(spec, w, drv, ens.use_exact_reference);
    const double dt = drv.dt_fine();
    double test_hat = 0.0, test_b = 0.0;
    for (std::size_t k = 0; k < drv.db.size(); ++k) {
      const double hk = h(dt * static_cast<double>(k));
      test_hat += hk * tp.root_alpha[k] * drv.dbhat[k];
      test_b += hk * tp.alpha[k] * drv.db[k];
    }
    lhs[static_cast<std::size_t>(i)] = f.sharp(tp, drv) * test_hat;
    rhs[static_cast<std::size_t>(i)] = f.value(tp, drv) * test_b;
  });
  return IbpResult{mean_stderr(lhs, ens.seed), mean_stderr(rhs, ens.seed)};
}

}  // namespace dirform
