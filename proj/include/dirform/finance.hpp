#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirform/limit_law.hpp"
#include "dirform/rng.hpp"
#include "dirform/sde.hpp"
#include "dirform/stats.hpp"
#include "dirform/wiener.hpp"

namespace dirform {

/// European payoff with the derivatives the propagation formulas consume.
/// smooth2 marks a bounded, piecewise-continuous curvature: only such
/// payoffs admit the hedge-error formula.
struct Payoff {
  std::string kind;
  std::function<double(double)> value;
  std::function<double(double)> slope;
  std::function<double(double)> curvature;
  std::optional<double> strike;  // set for strike-based payoffs; enables closed tail integrals
  bool smooth2 = false;
};

inline Payoff call_payoff(double strike) {
  Payoff p;
  p.kind = "call";
  p.strike = strike;
  p.value = [strike](double x) { return x > strike ? x - strike : 0.0; };
  p.slope = [strike](double x) { return x > strike ? 1.0 : 0.0; };
  p.curvature = [](double) { return 0.0; };
  p.smooth2 = false;
  return p;
}

/// Call with a quadratic cap of half-width `width` around the strike,
/// matching value and slope at the band edges.
inline Payoff smoothed_call_payoff(double strike, double width = 0.0) {
  if (width == 0.0) width = 0.01 * strike;
  if (!(width > 0.0)) throw std::invalid_argument("smoothed_call_payoff: width must be > 0");
  Payoff p;
  p.kind = "smoothed-call";
  p.strike = strike;
  p.value = [strike, width](double x) {
    if (x <= strike - width) return 0.0;
    if (x >= strike + width) return x - strike;
    const double u = x - strike + width;
    return u * u / (4.0 * width);
  };
  p.slope = [strike, width](double x) {
    if (x <= strike - width) return 0.0;
    if (x >= strike + width) return 1.0;
    return (x - strike + width) / (2.0 * width);
  };
  p.curvature = [strike, width](double x) {
    if (x <= strike - width || x >= strike + width) return 0.0;
    return 1.0 / (2.0 * width);
  };
  p.smooth2 = true;
  return p;
}

inline Payoff constant_payoff(double c) {
  Payoff p;
  p.kind = "constant";
  p.value = [c](double) { return c; };
  p.slope = [](double) { return 0.0; };
  p.curvature = [](double) { return 0.0; };
  p.smooth2 = true;
  return p;
}

/// Asset model dX = X sigma(X,t) dB + X r(t) dt with level-dependent
/// volatility. constant_sigma/constant_rate enable closed-form pricing.
struct LevelVolModel {
  std::function<double(double, double)> sigma;
  std::function<double(double, double)> sigma_x;
  std::function<double(double, double)> sigma_xx;
  std::function<double(double)> rate;
  std::optional<double> constant_sigma;
  std::optional<double> constant_rate;
  double x0 = 0.0;
  double horizon = 1.0;
  Payoff payoff;

  bool closed_form_available() const { return constant_sigma && constant_rate; }
};

inline LevelVolModel constant_vol_model(double sigma, double rate, double x0, double horizon,
                                        Payoff payoff) {
  LevelVolModel m;
  m.sigma = [sigma](double, double) { return sigma; };
  m.sigma_x = [](double, double) { return 0.0; };
  m.sigma_xx = [](double, double) { return 0.0; };
  m.rate = [rate](double) { return rate; };
  m.constant_sigma = sigma;
  m.constant_rate = rate;
  m.x0 = x0;
  m.horizon = horizon;
  m.payoff = std::move(payoff);
  return m;
}

/// sigma(x) = c x^{beta-1}; the state argument is floored far below x0 so
/// the power stays finite if a path ever collapses toward zero.
inline LevelVolModel cev_vol_model(double c, double beta, double rate, double x0, double horizon,
                                   Payoff payoff) {
  if (!(c > 0.0) || !(x0 > 0.0)) throw std::invalid_argument("cev_vol_model: need c > 0, x0 > 0");
  const double floor = 1e-8 * x0;
  LevelVolModel m;
  m.sigma = [c, beta, floor](double x, double) { return c * std::pow(std::max(x, floor), beta - 1.0); };
  m.sigma_x = [c, beta, floor](double x, double) {
    return x <= floor ? 0.0 : c * (beta - 1.0) * std::pow(x, beta - 2.0);
  };
  m.sigma_xx = [c, beta, floor](double x, double) {
    return x <= floor ? 0.0 : c * (beta - 1.0) * (beta - 2.0) * std::pow(x, beta - 3.0);
  };
  m.rate = [rate](double) { return rate; };
  m.constant_rate = rate;
  m.x0 = x0;
  m.horizon = horizon;
  m.payoff = std::move(payoff);
  return m;
}

namespace detail {

/// Natural cubic spline through (xs, ys) with linear extrapolation that
/// keeps the first derivative continuous at the end knots.
struct CubicSpline {
  std::vector<double> xs, ys, m2;  // m2: second derivatives at the knots

  static CubicSpline fit(std::vector<double> xs, std::vector<double> ys) {
    const std::size_t n = xs.size();
    if (n < 3 || ys.size() != n) throw std::invalid_argument("spline: need >= 3 knots");
    for (std::size_t i = 0; i + 1 < n; ++i)
      if (!(xs[i] < xs[i + 1])) throw std::invalid_argument("spline: knots must increase");
    std::vector<double> h(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) h[i] = xs[i + 1] - xs[i];
    std::vector<double> diag(n, 2.0), off(n, 0.0), rhs(n, 0.0), m2(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      diag[i] = 2.0 * (h[i - 1] + h[i]);
      rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
      off[i] = h[i];
    }
    for (std::size_t i = 2; i + 1 < n; ++i) {
      const double w = h[i - 1] / diag[i - 1];
      diag[i] -= w * off[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      m2[i] = (rhs[i] - off[i] * m2[i + 1]) / diag[i];
      if (i == 1) break;
    }
    return CubicSpline{std::move(xs), std::move(ys), std::move(m2)};
  }

  std::size_t interval(double x) const {
    const std::size_t n = xs.size();
    if (x <= xs[1]) return 0;
    if (x >= xs[n - 2]) return n - 2;
    return static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin()) - 1;
  }

  double eval(double x) const {
    if (x < xs.front()) return ys.front() + deriv_at_knot(0) * (x - xs.front());
    if (x > xs.back()) return ys.back() + deriv_at_knot(xs.size() - 1) * (x - xs.back());
    const std::size_t i = interval(x);
    const double h = xs[i + 1] - xs[i], a = (xs[i + 1] - x) / h, b = (x - xs[i]) / h;
    return a * ys[i] + b * ys[i + 1] +
           ((a * a * a - a) * m2[i] + (b * b * b - b) * m2[i + 1]) * h * h / 6.0;
  }

  double deriv(double x) const {
    if (x < xs.front()) return deriv_at_knot(0);
    if (x > xs.back()) return deriv_at_knot(xs.size() - 1);
    const std::size_t i = interval(x);
    const double h = xs[i + 1] - xs[i], a = (xs[i + 1] - x) / h, b = (x - xs[i]) / h;
    return (ys[i + 1] - ys[i]) / h +
           ((3.0 * b * b - 1.0) * m2[i + 1] - (3.0 * a * a - 1.0) * m2[i]) * h / 6.0;
  }

  double second(double x) const {
    if (x < xs.front() || x > xs.back()) return 0.0;
    const std::size_t i = interval(x);
    const double h = xs[i + 1] - xs[i], a = (xs[i + 1] - x) / h, b = (x - xs[i]) / h;
    return a * m2[i] + b * m2[i + 1];
  }

  double deriv_at_knot(std::size_t i) const {
    const std::size_t j = i + 1 < xs.size() ? i : i - 1;
    const double h = xs[j + 1] - xs[j];
    const double base = (ys[j + 1] - ys[j]) / h;
    if (i == j) return base - h * (2.0 * m2[j] + m2[j + 1]) / 6.0;
    return base + h * (m2[j] + 2.0 * m2[j + 1]) / 6.0;
  }
};

}  // namespace detail

/// Volatility interpolated from a level table; constant in time.
inline LevelVolModel table_vol_model(std::vector<double> levels, std::vector<double> sigmas,
                                     double rate, double x0, double horizon, Payoff payoff) {
  auto spline = std::make_shared<detail::CubicSpline>(
      detail::CubicSpline::fit(std::move(levels), std::move(sigmas)));
  LevelVolModel m;
  m.sigma = [spline](double x, double) {
    const double s = spline->eval(x);
    if (!(s > 0.0)) throw std::domain_error("table_vol_model: sigma interpolated to <= 0");
    return s;
  };
  m.sigma_x = [spline](double x, double) { return spline->deriv(x); };
  m.sigma_xx = [spline](double x, double) { return spline->second(x); };
  m.rate = [rate](double) { return rate; };
  m.constant_rate = rate;
  m.x0 = x0;
  m.horizon = horizon;
  m.payoff = std::move(payoff);
  return m;
}

/// Model with its induced dynamics and the adapted error-structure weight.
struct ModelBundle {
  LevelVolModel model;
  SdeSpec sde;
  WeightProcess weight;
};

/// Builds the SDE a = x sigma, b = x r and validates positivity and all
/// claimed derivatives by finite differences on the probe grid.
inline ModelBundle build_model(LevelVolModel model) {
  if (!(model.x0 > 0.0)) throw std::invalid_argument("build_model: x0 must be > 0");
  SdeSpec sde;
  sde.a = [s = model.sigma](double x, double t) { return x * s(x, t); };
  sde.b = [r = model.rate](double x, double t) { return x * r(t); };
  sde.a_x = [s = model.sigma, sx = model.sigma_x](double x, double t) {
    return s(x, t) + x * sx(x, t);
  };
  sde.b_x = [r = model.rate](double, double t) { return r(t); };
  sde.a_xx = [sx = model.sigma_x, sxx = model.sigma_xx](double x, double t) {
    return 2.0 * sx(x, t) + x * sxx(x, t);
  };
  sde.x0 = model.x0;
  sde.horizon = model.horizon;
  if (model.constant_sigma && model.constant_rate)
    sde.lognormal = LognormalParams{*model.constant_sigma, *model.constant_rate};

  const ProbeGrid probes = default_probes(sde);
  for (double x : probes.xs)
    for (double t : probes.ts)
      if (!(model.sigma(x, t) > 0.0))
        throw std::domain_error("build_model: sigma must be strictly positive");
  validate_spec(sde, probes);

  WeightProcess w = adapted_weight(sde);
  return ModelBundle{std::move(model), std::move(sde), std::move(w)};
}

/// exp(-int_t^T r) with a constant-rate fast path; Simpson otherwise.
inline double discount(const LevelVolModel& model, double t) {
  const double tau = model.horizon - t;
  if (!(tau >= 0.0)) throw std::invalid_argument("discount: t beyond the horizon");
  if (model.constant_rate) return std::exp(-*model.constant_rate * tau);
  const int n = 200;  // even panel count
  const double h = tau / n;
  double s = model.rate(t) + model.rate(model.horizon);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * model.rate(t + h * k);
  return std::exp(-s * h / 3.0);
}

/// One state path with everything the closed-form error formulas read:
/// the first variation M, the weight samples, and the running quadrature
///   quad_k = sum_{j<k} X_j^2 sigma_j^2 alpha_j / M_j^2 dt,
/// so that Gamma[X_k] = M_k^2 quad_k and Gamma[X_i, X_j] = M_i M_j quad_min.
struct FinancePath {
  PathGrid x;
  std::vector<double> m;
  std::vector<double> alpha;
  std::vector<double> quad;
  double dt = 0.0;
};

inline FinancePath finance_path(const ModelBundle& mb, const DriverPaths& drv,
                                bool use_exact_reference = true) {
  detail::check_horizon(mb.sde, drv);
  FinancePath fp;
  fp.dt = drv.dt_fine();
  fp.x.times = uniform_times(drv.n_fine, drv.horizon);
  fp.x.values = reference_fine_values(mb.sde, drv, use_exact_reference);
  fp.m = detail::first_variation_values(mb.sde, fp.x.values, drv);
  fp.alpha = detail::weight_samples(mb.weight, fp.x.values, drv);
  fp.quad.assign(fp.x.values.size(), 0.0);
  for (std::size_t k = 0; k + 1 < fp.quad.size(); ++k) {
    const double xk = fp.x.values[k];
    const double sk = mb.model.sigma(xk, fp.x.times[k]);
    fp.quad[k + 1] = fp.quad[k] + xk * xk * sk * sk * fp.alpha[k] / (fp.m[k] * fp.m[k]) * fp.dt;
  }
  return fp;
}

inline double gamma_x(const FinancePath& fp, std::size_t idx) {
  return fp.m[idx] * fp.m[idx] * fp.quad[idx];
}

inline double gamma_x(const FinancePath& fp, std::size_t i, std::size_t j) {
  return fp.m[i] * fp.m[j] * fp.quad[std::min(i, j)];
}

/// sqrt(Gamma[X_t]) / (X_t sigma): the proportional error per unit of
/// volatility, a finite-variation process.
inline PathGrid feedback_rate(const ModelBundle& mb, const FinancePath& fp) {
  PathGrid out;
  out.times = fp.x.times;
  out.values.resize(fp.x.values.size());
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    const double xk = fp.x.values[k];
    out.values[k] = std::sqrt(gamma_x(fp, k)) / (xk * mb.model.sigma(xk, out.times[k]));
  }
  return out;
}

/// Conditional expectations behind price, hedge, and their error formulas:
///   k1 = E[f'(X_T) M_T | F_t]
///   k2 = E[(M_T/M_t)(f''(X_T) M_T + f'(X_T) Z_t^T) | F_t]
///   raw_price = E[f(X_T) | F_t]
/// Standard errors are zero in closed form.
struct ConditionalKernels {
  double raw_price = 0.0, k1 = 0.0, k2 = 0.0;
  double raw_price_se = 0.0, k1_se = 0.0, k2_se = 0.0;
  bool has_k2 = false;
};

enum class PricingMode { closed_form, nested_mc };

/// Nested Monte Carlo budget; inner draws are keyed by
/// (seed, outer path, grid index, inner path, step) so every estimate is
/// reproducible and independent across inner paths.
struct NestedBudget {
  std::int64_t inner_paths = 1000;
  bool want_k2 = false;
};

namespace detail {

inline double lognormal_factor(double rate, double sigma, double tau, double z) {
  return std::exp((rate - 0.5 * sigma * sigma) * tau + sigma * std::sqrt(tau) * z);
}

/// E[g(R(Z))] for standard normal Z by Simpson on [-12, 12].
template <class G>
double gauss_expectation(const G& g) {
  const int n = 12000;  // even panel count
  const double lo = -12.0, h = 24.0 / n;
  const double inv_root_2pi = 0.3989422804014326779;
  auto weighted = [&](double z) { return g(z) * inv_root_2pi * std::exp(-0.5 * z * z); };
  double s = weighted(lo) + weighted(-lo);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * weighted(lo + h * k);
  return s * h / 3.0;
}

inline ConditionalKernels closed_kernels(const ModelBundle& mb, double x, double m, double tau,
                                         bool want_k2) {
  if (!mb.model.closed_form_available())
    throw std::invalid_argument("closed-form pricing requires constant sigma and rate");
  const Payoff& f = mb.model.payoff;
  if (want_k2 && !f.smooth2)
    throw std::invalid_argument("hedge-error kernel requires a payoff with bounded curvature");
  const double sigma = *mb.model.constant_sigma;
  const double rate = *mb.model.constant_rate;
  ConditionalKernels out;
  out.has_k2 = want_k2;
  if (tau == 0.0) {
    out.raw_price = f.value(x);
    out.k1 = m * f.slope(x);
    if (want_k2) out.k2 = m * f.curvature(x);
    return out;
  }
  if (f.kind == "call" && f.strike) {
    // Lognormal tail integrals in closed form; Simpson would smear the kink.
    const double strike = *f.strike;
    const double sr = sigma * std::sqrt(tau);
    const double d1 = (std::log(x / strike) + (rate + 0.5 * sigma * sigma) * tau) / sr;
    const double d2 = d1 - sr;
    const double grow = std::exp(rate * tau);
    out.raw_price = x * grow * normal_cdf(d1) - strike * normal_cdf(d2);
    out.k1 = m * grow * normal_cdf(d1);
    if (want_k2) throw std::invalid_argument("hedge-error kernel requires a smoothed call");
    return out;
  }
  auto terminal = [&](double z) { return x * lognormal_factor(rate, sigma, tau, z); };
  out.raw_price = gauss_expectation([&](double z) { return f.value(terminal(z)); });
  out.k1 = m * gauss_expectation([&](double z) {
    const double xt = terminal(z);
    return f.slope(xt) * (xt / x);
  });
  if (want_k2)
    out.k2 = m * gauss_expectation([&](double z) {
      const double xt = terminal(z);
      return f.curvature(xt) * (xt / x) * (xt / x);
    });
  return out;
}

inline ConditionalKernels nested_kernels(const ModelBundle& mb, const FinancePath& fp,
                                         const DriverPaths& drv, std::size_t idx,
                                         const NestedBudget& nb) {
  const Payoff& f = mb.model.payoff;
  if (nb.want_k2 && !f.smooth2)
    throw std::invalid_argument("hedge-error kernel requires a payoff with bounded curvature");
  if (nb.inner_paths < 2) throw std::invalid_argument("nested_kernels: need >= 2 inner paths");
  const std::size_t n_fine = fp.x.values.size() - 1;
  if (idx > n_fine) throw std::out_of_range("nested_kernels: grid index");
  if (n_fine >= (1u << 20) || nb.inner_paths >= (1 << 24))
    throw std::invalid_argument("nested_kernels: keying limits exceeded");
  const double dt = fp.dt, root_dt = std::sqrt(dt);
  const double x_t = fp.x.values[idx], m_t = fp.m[idx];
  std::vector<double> sf(static_cast<std::size_t>(nb.inner_paths));
  std::vector<double> s1(static_cast<std::size_t>(nb.inner_paths));
  std::vector<double> s2(nb.want_k2 ? static_cast<std::size_t>(nb.inner_paths) : 0);
  for (std::int64_t inner = 0; inner < nb.inner_paths; ++inner) {
    double x = x_t, logm_rel = 0.0, z = 0.0;
    for (std::size_t j = idx; j < n_fine; ++j) {
      const std::uint64_t step = (static_cast<std::uint64_t>(inner) << 40) |
                                 (static_cast<std::uint64_t>(idx) << 20) |
                                 static_cast<std::uint64_t>(j);
      const double db =
          rng::normal_draw(drv.seed, rng::chan_nested, static_cast<std::uint64_t>(drv.path_index),
                           step) *
          root_dt;
      const double t = dt * static_cast<double>(j);
      const double a = mb.sde.a(x, t), b = mb.sde.b(x, t);
      const double ax = mb.sde.a_x(x, t), bx = mb.sde.b_x(x, t);
      if (nb.want_k2) {
        const double L = mb.sde.a_xx(x, t);
        const double alpha = mb.weight.sample(x, t);
        z += L * db - std::sqrt(alpha) * L * m_t * std::exp(logm_rel) * dt;
      }
      logm_rel += ax * db + (bx - 0.5 * ax * ax) * dt;
      x += a * db + b * dt;
      if (!(std::abs(x) <= std::numeric_limits<double>::max()))
        throw blow_up_error(static_cast<std::int64_t>(j));
    }
    const double m_T = m_t * std::exp(logm_rel);
    const std::size_t i = static_cast<std::size_t>(inner);
    sf[i] = f.value(x);
    s1[i] = f.slope(x) * m_T;
    if (nb.want_k2) s2[i] = (m_T / m_t) * (f.curvature(x) * m_T + f.slope(x) * z);
  }
  ConditionalKernels out;
  out.has_k2 = nb.want_k2;
  const Estimate ef = mean_stderr(sf, drv.seed);
  const Estimate e1 = mean_stderr(s1, drv.seed);
  out.raw_price = ef.mean;
  out.raw_price_se = ef.std_error;
  out.k1 = e1.mean;
  out.k1_se = e1.std_error;
  if (nb.want_k2) {
    const Estimate e2 = mean_stderr(s2, drv.seed);
    out.k2 = e2.mean;
    out.k2_se = e2.std_error;
  }
  return out;
}

}  // namespace detail

inline ConditionalKernels conditional_kernels(const ModelBundle& mb, const FinancePath& fp,
                                              const DriverPaths& drv, std::size_t idx,
                                              PricingMode mode, const NestedBudget& nb = {}) {
  if (mode == PricingMode::closed_form) {
    const std::size_t n_fine = fp.x.values.size() - 1;
    if (idx > n_fine) throw std::out_of_range("conditional_kernels: grid index");
    const double tau = fp.dt * static_cast<double>(n_fine - idx);
    return detail::closed_kernels(mb, fp.x.values[idx], fp.m[idx], tau, nb.want_k2);
  }
  return detail::nested_kernels(mb, fp, drv, idx, nb);
}

/// Discounted price and hedge ratio at one grid index, with standard
/// errors inherited from the kernel estimates.
struct PriceHedge {
  double price = 0.0, hedge = 0.0;
  double price_se = 0.0, hedge_se = 0.0;
};

inline PriceHedge price_and_hedge(const ModelBundle& mb, const FinancePath& fp, std::size_t idx,
                                  const ConditionalKernels& kern) {
  const double t = fp.x.times[idx];
  const double disc = discount(mb.model, t);
  const double m = fp.m[idx];
  return PriceHedge{disc * kern.raw_price, disc * kern.k1 / m, disc * kern.raw_price_se,
                    disc * kern.k1_se / m};
}

/// Gamma[V_t] from the same kernel estimate as the hedge, so the identity
/// Gamma[V] = H^2 Gamma[X] holds to rounding.
inline double gamma_v(const ModelBundle& mb, const FinancePath& fp, std::size_t idx,
                      const ConditionalKernels& kern) {
  const double disc = discount(mb.model, fp.x.times[idx]);
  const double m = fp.m[idx];
  return disc * disc * kern.k1 * kern.k1 * gamma_x(fp, idx) / (m * m);
}

inline double gamma_v(const ModelBundle& mb, const FinancePath& fp, std::size_t i, std::size_t j,
                      const ConditionalKernels& kern_i, const ConditionalKernels& kern_j) {
  const double disc_i = discount(mb.model, fp.x.times[i]);
  const double disc_j = discount(mb.model, fp.x.times[j]);
  return disc_i * disc_j * kern_i.k1 * kern_j.k1 * gamma_x(fp, i, j) / (fp.m[i] * fp.m[j]);
}

inline double gamma_h(const ModelBundle& mb, const FinancePath& fp, std::size_t idx,
                      const ConditionalKernels& kern) {
  if (!mb.model.payoff.smooth2)
    throw std::invalid_argument("gamma_h: payoff must have bounded curvature");
  if (!kern.has_k2) throw std::invalid_argument("gamma_h: kernels computed without k2");
  const double disc = discount(mb.model, fp.x.times[idx]);
  const double m = fp.m[idx];
  return disc * disc * kern.k2 * kern.k2 * gamma_x(fp, idx) / (m * m);
}

}  // namespace dirform
