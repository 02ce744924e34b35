#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <iostream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirform/finance.hpp"
#include "dirform/io.hpp"
#include "dirform/limit_law.hpp"
#include "dirform/parallel.hpp"
#include "dirform/rng.hpp"
#include "dirform/sde.hpp"
#include "dirform/stats.hpp"
#include "dirform/wiener.hpp"
#include "json.hpp"

namespace dirform {

/// One asserted quantity in an experiment report. comparison is applied as
/// `measured <op> threshold`.
struct Criterion {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  std::string comparison;  // "lt" | "le" | "ge"
  bool pass = false;
};

inline Criterion make_criterion(std::string name, double measured, std::string comparison,
                                double threshold) {
  Criterion c;
  c.name = std::move(name);
  c.measured = measured;
  c.threshold = threshold;
  c.comparison = std::move(comparison);
  if (c.comparison == "lt")
    c.pass = measured < threshold;
  else if (c.comparison == "le")
    c.pass = measured <= threshold;
  else if (c.comparison == "ge")
    c.pass = measured >= threshold;
  else
    throw std::invalid_argument("make_criterion: unknown comparison " + c.comparison);
  if (!std::isfinite(measured)) c.pass = false;
  return c;
}

struct ExperimentReport {
  std::string experiment;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<Criterion> criteria;
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<std::string> outputs;

  bool all_pass() const {
    for (const Criterion& c : criteria)
      if (!c.pass) return false;
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["experiment"] = experiment;
    doc["seed"] = seed;
    doc["config"] = config;
    doc["criteria"] = nlohmann::json::array();
    for (const Criterion& c : criteria)
      doc["criteria"].push_back({{"name", c.name},
                                 {"measured", c.measured},
                                 {"threshold", c.threshold},
                                 {"comparison", c.comparison},
                                 {"pass", c.pass}});
    doc["metrics"] = metrics;
    doc["outputs"] = outputs;
    doc["pass"] = all_pass();
    return doc;
  }
};

struct RunOptions {
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
  if (!j.is_object()) throw std::invalid_argument(ctx + ": expected a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw std::invalid_argument(ctx + ": unknown key \"" + key + "\"");
}

inline double jnum(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw std::invalid_argument(std::string(key) + " must be a number");
  return j.at(key).get<double>();
}

inline double jnum_req(const nlohmann::json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw std::invalid_argument(ctx + ": missing numeric field \"" + key + "\"");
  return j.at(key).get<double>();
}

inline std::int64_t jint(const nlohmann::json& j, const char* key, std::int64_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer())
    throw std::invalid_argument(std::string(key) + " must be an integer");
  return j.at(key).get<std::int64_t>();
}

inline std::string jstr(const nlohmann::json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw std::invalid_argument(std::string(key) + " must be a string");
  return j.at(key).get<std::string>();
}

struct VarianceEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

inline VarianceEstimate variance_with_se(const std::vector<double>& samples) {
  const Estimate m = mean_stderr(samples);
  std::vector<double> dev2(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double d = samples[i] - m.mean;
    dev2[i] = d * d;
  }
  const Estimate v = mean_stderr(dev2);
  return VarianceEstimate{v.mean, v.std_error};
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean_stderr(a).mean, mb = mean_stderr(b).mean;
  double cab = 0.0, caa = 0.0, cbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cab += (a[i] - ma) * (b[i] - mb);
    caa += (a[i] - ma) * (a[i] - ma);
    cbb += (b[i] - mb) * (b[i] - mb);
  }
  const double denom = std::sqrt(caa * cbb);
  return denom > 0.0 ? cab / denom : 0.0;
}

inline double second_moment(const std::vector<double>& a) {
  std::vector<double> sq(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) sq[i] = a[i] * a[i];
  return mean_stderr(sq).mean;
}

}  // namespace detail

inline Payoff parse_payoff(const nlohmann::json& j) {
  detail::check_keys(j, {"kind", "K", "smoothing", "value"}, "payoff");
  const std::string kind = detail::jstr(j, "kind", "");
  if (kind == "call") return call_payoff(detail::jnum_req(j, "K", "payoff"));
  if (kind == "smoothed-call")
    return smoothed_call_payoff(detail::jnum_req(j, "K", "payoff"), detail::jnum(j, "smoothing", 0.0));
  if (kind == "constant") return constant_payoff(detail::jnum_req(j, "value", "payoff"));
  throw std::invalid_argument("payoff.kind must be call, smoothed-call, or constant");
}

/// Builds and validates the configured model, including the derivative
/// finite-difference checks performed by build_model.
inline ModelBundle parse_model(const nlohmann::json& j) {
  detail::check_keys(j, {"sigma", "r", "x0", "T", "payoff"}, "model");
  const double r = detail::jnum_req(j, "r", "model");
  const double x0 = detail::jnum_req(j, "x0", "model");
  const double horizon = detail::jnum(j, "T", 1.0);
  Payoff payoff = j.contains("payoff") ? parse_payoff(j.at("payoff")) : call_payoff(x0);
  if (!j.contains("sigma")) throw std::invalid_argument("model: missing \"sigma\"");
  const nlohmann::json& s = j.at("sigma");
  const std::string kind = detail::jstr(s, "kind", "");
  if (kind == "constant") {
    detail::check_keys(s, {"kind", "value"}, "sigma");
    return build_model(
        constant_vol_model(detail::jnum_req(s, "value", "sigma"), r, x0, horizon, std::move(payoff)));
  }
  if (kind == "cev") {
    detail::check_keys(s, {"kind", "c", "beta", "anchor_level", "anchor_sigma"}, "sigma");
    const double beta = detail::jnum_req(s, "beta", "sigma");
    double c = detail::jnum(s, "c", 0.0);
    if (c == 0.0) {
      const double level = detail::jnum_req(s, "anchor_level", "sigma");
      const double sig = detail::jnum_req(s, "anchor_sigma", "sigma");
      c = sig * std::pow(level, 1.0 - beta);
    }
    return build_model(cev_vol_model(c, beta, r, x0, horizon, std::move(payoff)));
  }
  if (kind == "table") {
    detail::check_keys(s, {"kind", "levels", "sigmas"}, "sigma");
    if (!s.contains("levels") || !s.contains("sigmas"))
      throw std::invalid_argument("sigma: table needs \"levels\" and \"sigmas\"");
    return build_model(table_vol_model(s.at("levels").get<std::vector<double>>(),
                                       s.at("sigmas").get<std::vector<double>>(), r, x0, horizon,
                                       std::move(payoff)));
  }
  throw std::invalid_argument("sigma.kind must be constant, cev, or table");
}

namespace detail {

inline const std::set<std::string>& experiment_kinds() {
  static const std::set<std::string> kinds = {"euler-vs-limit",   "rootzen",
                                              "gamma-check",      "finance-report",
                                              "asymptotic-principle", "donsker"};
  return kinds;
}

inline void check_budget_floor(const nlohmann::json& cfg, bool needs_grid) {
  if (needs_grid) {
    if (jint(cfg, "n", 64) < 16) throw std::invalid_argument("n must be >= 16");
    if (jint(cfg, "refine", 64) < 16)
      throw std::invalid_argument("refine must be >= 16 for limit comparisons");
  }
  if (jint(cfg, "n_paths", 1000) < 1000) throw std::invalid_argument("n_paths must be >= 1000");
}

/// Piecewise-defined functionals supported by the asymptotic-principle
/// comparison: a coarse/fine discretization gap and the matching sharp.
struct PrincipleFunctional {
  std::function<double(const SdeSpec&, const DriverPaths&)> scaled_gap;
  PathFunctional sharp_fn;
};

/// Continuous-time interpolant of the coarse scheme on the fine grid:
/// coefficients stay frozen at the latest coarse knot.
inline std::vector<double> coarse_interpolant_fine_values(const SdeSpec& spec,
                                                          const DriverPaths& drv) {
  const double dtc = drv.dt_coarse(), dtf = drv.dt_fine();
  std::vector<double> x(static_cast<std::size_t>(drv.n_fine) + 1);
  x[0] = spec.x0;
  double ca = 0.0, cb = 0.0;
  for (std::int64_t j = 0; j < drv.n_fine; ++j) {
    if (j % drv.refine == 0) {
      const double t = dtc * static_cast<double>(j / drv.refine);
      ca = spec.a(x[static_cast<std::size_t>(j)], t);
      cb = spec.b(x[static_cast<std::size_t>(j)], t);
    }
    const double next =
        x[static_cast<std::size_t>(j)] + ca * drv.db[static_cast<std::size_t>(j)] + cb * dtf;
    if (!std::isfinite(next)) throw blow_up_error{j};
    x[static_cast<std::size_t>(j) + 1] = next;
  }
  return x;
}

inline PrincipleFunctional make_principle_functional(const nlohmann::json& fcfg) {
  check_keys(fcfg, {"kind", "f", "h", "K", "smoothing"}, "functional");
  const std::string kind = jstr(fcfg, "kind", "");
  const std::string f_kind = jstr(fcfg, "f", "identity");
  PrincipleFunctional pf;
  if (kind == "terminal") {
    std::function<double(double)> f, df;
    if (f_kind == "identity") {
      f = [](double x) { return x; };
      df = [](double) { return 1.0; };
    } else if (f_kind == "sine") {
      f = [](double x) { return std::sin(x); };
      df = [](double x) { return std::cos(x); };
    } else if (f_kind == "smoothed-call") {
      const Payoff p = smoothed_call_payoff(jnum_req(fcfg, "K", "functional"),
                                            jnum(fcfg, "smoothing", 0.0));
      f = p.value;
      df = p.slope;
    } else {
      throw std::invalid_argument("functional.f must be identity, sine, or smoothed-call");
    }
    pf.sharp_fn = terminal_functional(f, df);
    pf.scaled_gap = [f](const SdeSpec& spec, const DriverPaths& drv) {
      const PathGrid coarse = euler_path(spec, drv);
      const std::vector<double> fine = reference_fine_values(spec, drv);
      return std::sqrt(static_cast<double>(drv.n)) * (f(coarse.values.back()) - f(fine.back()));
    };
    return pf;
  }
  if (kind == "state-integral") {
    std::function<double(double, double)> f, f_x;
    if (f_kind == "identity") {
      f = [](double x, double) { return x; };
      f_x = [](double, double) { return 1.0; };
    } else if (f_kind == "sine") {
      f = [](double x, double) { return std::sin(x); };
      f_x = [](double x, double) { return std::cos(x); };
    } else {
      throw std::invalid_argument("functional.f must be identity or sine for state-integral");
    }
    pf.sharp_fn = state_integral_functional(f, f_x);
    // Both integrals are fine left sums, the scheme side evaluated along the
    // frozen-coefficient interpolant; a coarse left sum would add a Riemann
    // error of its own on top of the scheme error.
    pf.scaled_gap = [f](const SdeSpec& spec, const DriverPaths& drv) {
      const std::vector<double> interp = coarse_interpolant_fine_values(spec, drv);
      const std::vector<double> fine = reference_fine_values(spec, drv);
      const double dtf = drv.dt_fine();
      double sn = 0.0, sf = 0.0;
      for (std::size_t j = 0; j + 1 < interp.size(); ++j) {
        const double t = dtf * static_cast<double>(j);
        sn += f(interp[j], t) * (interp[j + 1] - interp[j]);
        sf += f(fine[j], t) * (fine[j + 1] - fine[j]);
      }
      return std::sqrt(static_cast<double>(drv.n)) * (sn - sf);
    };
    return pf;
  }
  if (kind == "brownian-integral") {
    const std::string h_kind = jstr(fcfg, "h", "one");
    std::function<double(double)> h;
    if (h_kind == "one")
      h = [](double) { return 1.0; };
    else if (h_kind == "ramp")
      h = [](double t) { return t; };
    else
      throw std::invalid_argument("functional.h must be one or ramp");
    pf.sharp_fn = brownian_integral_functional(h);
    // The driver is recovered from coarse observations of the true state:
    // dB ~ dX/a(X) - (b/a)(X) dt. The recovery error carries the
    // discretization noise that the sharp reproduces in law.
    pf.scaled_gap = [h](const SdeSpec& spec, const DriverPaths& drv) {
      const std::vector<double> fine = reference_fine_values(spec, drv);
      const std::vector<double> sub = subsample(fine, drv.refine);
      const double dtc = drv.dt_coarse(), dtf = drv.dt_fine();
      double recovered = 0.0, truth = 0.0;
      for (std::size_t k = 0; k + 1 < sub.size(); ++k) {
        const double t = dtc * static_cast<double>(k);
        const double a = spec.a(sub[k], t), b = spec.b(sub[k], t);
        recovered += h(t) * ((sub[k + 1] - sub[k]) / a - b / a * dtc);
      }
      for (std::size_t j = 0; j < drv.db.size(); ++j)
        truth += h(dtf * static_cast<double>(j)) * drv.db[j];
      return std::sqrt(static_cast<double>(drv.n)) * (recovered - truth);
    };
    return pf;
  }
  throw std::invalid_argument(
      "functional.kind must be terminal, state-integral, or brownian-integral");
}

inline SurfaceFn make_surface(const nlohmann::json& j) {
  check_keys(j, {"kind", "value"}, "integrand");
  const std::string kind = jstr(j, "kind", "identity");
  SurfaceFn f;
  if (kind == "identity") {
    f.value = [](double x, double) { return x; };
    f.deriv_x = [](double, double) { return 1.0; };
  } else if (kind == "sine") {
    f.value = [](double x, double) { return std::sin(x); };
    f.deriv_x = [](double x, double) { return std::cos(x); };
  } else if (kind == "constant") {
    const double c = jnum(j, "value", 1.0);
    f.value = [c](double, double) { return c; };
    f.deriv_x = [](double, double) { return 0.0; };
  } else {
    throw std::invalid_argument("integrand.kind must be identity, sine, or constant");
  }
  return f;
}

/// (1/2) int_0^1 E[f'(B_s, s)^2] ds by Simpson in s and Gaussian quadrature
/// in the B_s marginal.
inline double rootzen_oracle(const SurfaceFn& f) {
  const int panels = 200;
  const double h = 1.0 / panels;
  auto slice = [&](double s) {
    const double root_s = std::sqrt(s);
    return gauss_expectation([&](double z) {
      const double d = f.deriv_x(root_s * z, s);
      return d * d;
    });
  };
  double acc = slice(0.0) + slice(1.0);
  for (int k = 1; k < panels; ++k) acc += (k % 2 ? 4.0 : 2.0) * slice(h * k);
  return 0.5 * acc * h / 3.0;
}

inline void run_euler_vs_limit(const nlohmann::json& cfg, std::uint64_t seed, int threads,
                               const std::filesystem::path& out_dir, ExperimentReport& rep) {
  const ModelBundle mb = parse_model(cfg.at("model"));
  const std::int64_t n = jint(cfg, "n", 256);
  const std::int64_t refine = jint(cfg, "refine", 64);
  const std::int64_t n_paths = jint(cfg, "n_paths", 10000);
  std::vector<double> scaled(static_cast<std::size_t>(n_paths));
  std::vector<double> limit(static_cast<std::size_t>(n_paths));
  std::vector<double> endpoint(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, threads, [&](std::int64_t i) {
    const DriverPaths drv =
        make_drivers(n, refine, seed, i, mb.model.horizon, driver_set::driver_extra);
    scaled[static_cast<std::size_t>(i)] = scaled_error_path(mb.sde, drv).values.back();
    limit[static_cast<std::size_t>(i)] = simulate_limit_pair(mb.sde, drv).u.values.back();
    double b = 0.0;
    for (double v : drv.db) b += v;
    endpoint[static_cast<std::size_t>(i)] = b;
  });
  const double ks = ks_distance(scaled, limit);
  rep.criteria.push_back(make_criterion("limit-law-ks", ks, "le", jnum(cfg, "ks_threshold", 0.05)));
  const double m2_scaled = second_moment(scaled);
  const double m2_limit = second_moment(limit);
  rep.criteria.push_back(make_criterion("moment-ratio-deviation",
                                        std::abs(m2_scaled / m2_limit - 1.0), "le",
                                        jnum(cfg, "moment_tolerance", 0.1)));
  if (mb.model.constant_sigma) {
    const double s = *mb.model.constant_sigma, r = *mb.model.constant_rate;
    const double t = mb.model.horizon;
    const double closed =
        mb.model.x0 * mb.model.x0 * std::exp((2.0 * r + s * s) * t) * std::pow(s, 4) * t / 2.0;
    rep.criteria.push_back(make_criterion("limit-moment-vs-closed-form",
                                          std::abs(m2_limit / closed - 1.0), "le",
                                          jnum(cfg, "moment_tolerance", 0.1)));
  }
  rep.metrics["scaled_second_moment"] = m2_scaled;
  rep.metrics["limit_second_moment"] = m2_limit;
  rep.metrics["scaled_correlation_with_driver"] = correlation(scaled, endpoint);
  rep.metrics["limit_correlation_with_driver"] = correlation(limit, endpoint);
  std::vector<std::vector<double>> rows(scaled.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = {scaled[i], limit[i]};
  write_csv(out_dir / "euler_vs_limit.csv", {"scaled_error", "limit_sample"}, rows);
  rep.outputs.push_back("euler_vs_limit.csv");
}

inline void run_rootzen(const nlohmann::json& cfg, std::uint64_t seed, int threads,
                        const std::filesystem::path& out_dir, ExperimentReport& rep) {
  const SurfaceFn f = make_surface(cfg.value("integrand", nlohmann::json{{"kind", "identity"}}));
  const std::int64_t n = jint(cfg, "n", 64);
  const std::int64_t refine = jint(cfg, "refine", 128);
  const std::int64_t n_paths = jint(cfg, "n_paths", 100000);
  std::vector<double> scaled(static_cast<std::size_t>(n_paths));
  std::vector<double> limit(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, threads, [&](std::int64_t i) {
    const DriverPaths drv = make_drivers(n, refine, seed, i, 1.0, driver_set::driver_extra);
    const RootzenSample rs = rootzen_error(f, drv);
    scaled[static_cast<std::size_t>(i)] = rs.scaled_error;
    limit[static_cast<std::size_t>(i)] = rs.limit_sample;
  });
  const double oracle = rootzen_oracle(f);
  const VarianceEstimate vs = variance_with_se(scaled);
  const VarianceEstimate vl = variance_with_se(limit);
  // The coarse-minus-fine gap carries a 1/refine variance deficit.
  rep.criteria.push_back(make_criterion("scaled-variance-vs-oracle", std::abs(vs.value - oracle),
                                        "le", 3.0 * vs.std_error + oracle / static_cast<double>(refine)));
  rep.criteria.push_back(make_criterion("limit-variance-vs-oracle", std::abs(vl.value - oracle),
                                        "le", 3.0 * vl.std_error));
  rep.criteria.push_back(make_criterion("limit-law-ks", ks_distance(scaled, limit), "le",
                                        jnum(cfg, "ks_threshold", 0.05)));
  rep.metrics["scaled_variance"] = vs.value;
  rep.metrics["scaled_variance_stderr"] = vs.std_error;
  rep.metrics["limit_variance"] = vl.value;
  rep.metrics["limit_variance_stderr"] = vl.std_error;
  rep.metrics["oracle_variance"] = oracle;
  std::vector<std::vector<double>> rows(scaled.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = {scaled[i], limit[i]};
  write_csv(out_dir / "rootzen.csv", {"scaled_error", "limit_sample"}, rows);
  rep.outputs.push_back("rootzen.csv");
}

inline void run_gamma_check(const nlohmann::json& cfg, std::uint64_t seed, int threads,
                            const std::filesystem::path& out_dir, ExperimentReport& rep) {
  const ModelBundle mb = parse_model(cfg.at("model"));
  const std::int64_t n = jint(cfg, "n", 16);
  const std::int64_t refine = jint(cfg, "refine", 64);
  const std::int64_t n_paths = jint(cfg, "n_paths", 1000);
  const std::int64_t replicas = jint(cfg, "replicas", 256);
  const std::int64_t check_paths = jint(cfg, "check_paths", 100);
  const PathFunctional x_end =
      terminal_functional([](double x) { return x; }, [](double) { return 1.0; });

  std::vector<double> sharp_sq(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, threads, [&](std::int64_t i) {
    const DriverPaths drv =
        make_drivers(n, refine, seed, i, mb.model.horizon, driver_set::driver_copy);
    const TangentPath tp = simulate_tangent(mb.sde, mb.weight, drv);
    const double y = x_end.sharp(tp, drv);
    sharp_sq[static_cast<std::size_t>(i)] = y * y;
  });
  const Estimate unconditional = mean_stderr(sharp_sq, seed);

  std::vector<std::vector<double>> check_rows(static_cast<std::size_t>(check_paths));
  std::vector<int> ok(static_cast<std::size_t>(check_paths));
  parallel_for(check_paths, threads, [&](std::int64_t p) {
    DriverPaths drv = make_drivers(n, refine, seed, n_paths + p, mb.model.horizon,
                                   driver_set::driver_copy);
    const FinancePath fp = finance_path(mb, drv);
    const double quadrature = gamma_x(fp, fp.x.values.size() - 1);
    const Estimate cond = gamma_conditional(mb.sde, mb.weight, x_end, drv, replicas);
    const bool agree = std::abs(cond.mean - quadrature) <= 3.0 * cond.std_error;
    ok[static_cast<std::size_t>(p)] = agree ? 1 : 0;
    check_rows[static_cast<std::size_t>(p)] = {static_cast<double>(p), quadrature, cond.mean,
                                               cond.std_error, agree ? 1.0 : 0.0};
  });
  double agreeing = 0.0;
  for (int v : ok) agreeing += v;
  const double fraction = agreeing / static_cast<double>(check_paths);
  rep.criteria.push_back(
      make_criterion("conditional-agreement-fraction", fraction, "ge", jnum(cfg, "min_fraction", 0.95)));
  if (mb.model.constant_sigma) {
    const double s = *mb.model.constant_sigma, r = *mb.model.constant_rate;
    const double t = mb.model.horizon;
    const double closed =
        mb.model.x0 * mb.model.x0 * std::exp((2.0 * r + s * s) * t) * std::pow(s, 4) * t / 2.0;
    rep.criteria.push_back(make_criterion("unconditional-vs-closed-form",
                                          std::abs(unconditional.mean - closed), "le",
                                          3.0 * unconditional.std_error + 0.01 * closed));
  }
  rep.metrics["summary"] = {{"mean", unconditional.mean},
                            {"stderr", unconditional.std_error},
                            {"n_paths", unconditional.n_samples},
                            {"seed", seed}};
  std::vector<std::vector<double>> sample_rows(sharp_sq.size());
  for (std::size_t i = 0; i < sharp_sq.size(); ++i) sample_rows[i] = {sharp_sq[i]};
  write_csv(out_dir / "gamma_samples.csv", {"ysharp_sq"}, sample_rows);
  write_csv(out_dir / "gamma_check.csv",
            {"path", "quadrature", "conditional_mean", "conditional_stderr", "pass"}, check_rows);
  rep.outputs.push_back("gamma_samples.csv");
  rep.outputs.push_back("gamma_check.csv");
}

inline void run_finance_report(const nlohmann::json& cfg, std::uint64_t seed, int threads,
                               const std::filesystem::path& out_dir, ExperimentReport& rep) {
  const ModelBundle mb = parse_model(cfg.at("model"));
  const std::int64_t n = jint(cfg, "n", 16);
  const std::int64_t refine = jint(cfg, "refine", 64);
  const std::int64_t n_paths = jint(cfg, "n_paths", 1000);
  const std::int64_t sample_path = jint(cfg, "sample_path", 0);
  std::string pricing = jstr(cfg, "pricing", "");
  if (pricing.empty())
    pricing = mb.model.closed_form_available() ? "closed-form" : "nested-mc";
  if (pricing != "closed-form" && pricing != "nested-mc")
    throw std::invalid_argument("pricing must be closed-form or nested-mc");
  if (pricing == "closed-form" && !mb.model.closed_form_available())
    throw std::invalid_argument("closed-form pricing requires constant sigma and rate");
  const PricingMode mode =
      pricing == "closed-form" ? PricingMode::closed_form : PricingMode::nested_mc;
  NestedBudget nb;
  nb.inner_paths = jint(cfg, "inner_paths", 1000);
  nb.want_k2 = mb.model.payoff.smooth2;

  const DriverPaths drv =
      make_drivers(n, refine, seed, sample_path, mb.model.horizon, driver_set::driver);
  const FinancePath fp = finance_path(mb, drv);
  const PathGrid fb = feedback_rate(mb, fp);

  std::vector<std::vector<double>> rows;
  double identity_dev = 0.0;
  double h0 = 0.0, h0_se = 0.0;
  double max_gv = 0.0, max_gh = 0.0;
  for (std::int64_t k = 0; k <= n; ++k) {
    const std::size_t idx = static_cast<std::size_t>(k * refine);
    const ConditionalKernels kern = conditional_kernels(mb, fp, drv, idx, mode, nb);
    const PriceHedge ph = price_and_hedge(mb, fp, idx, kern);
    const double gx = gamma_x(fp, idx);
    const double gv = gamma_v(mb, fp, idx, kern);
    const double gh = nb.want_k2 ? gamma_h(mb, fp, idx, kern)
                                 : std::numeric_limits<double>::quiet_NaN();
    const double via_hedge = ph.hedge * ph.hedge * gx;
    const double scale = std::max({std::abs(gv), std::abs(via_hedge), 1e-300});
    identity_dev = std::max(identity_dev, std::abs(gv - via_hedge) / scale);
    if (k == 0) {
      h0 = ph.hedge;
      h0_se = ph.hedge_se;
    }
    max_gv = std::max(max_gv, std::abs(gv));
    if (nb.want_k2) max_gh = std::max(max_gh, std::abs(gh));
    rows.push_back({fp.x.times[idx], fp.x.values[idx], ph.price, ph.hedge, gx, gv, gh,
                    fb.values[idx]});
  }
  rep.criteria.push_back(make_criterion("price-error-identity", identity_dev, "le", 1e-10));

  // Tangent cross-check: E over copies of (sharp at T)^2 against the
  // pathwise quadrature, paired over a fresh ensemble.
  const PathFunctional x_end =
      terminal_functional([](double x) { return x; }, [](double) { return 1.0; });
  std::vector<double> diff(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, threads, [&](std::int64_t i) {
    const DriverPaths d =
        make_drivers(n, refine, seed, i, mb.model.horizon, driver_set::driver_copy);
    const TangentPath tp = simulate_tangent(mb.sde, mb.weight, d);
    const double s = x_end.sharp(tp, d);
    const FinancePath path_i = finance_path(mb, d);
    diff[static_cast<std::size_t>(i)] = s * s - gamma_x(path_i, path_i.x.values.size() - 1);
  });
  const Estimate dd = mean_stderr(diff, seed);
  rep.criteria.push_back(
      make_criterion("tangent-cross-check", std::abs(dd.mean), "le", 3.0 * dd.std_error));

  if (mb.model.constant_sigma && mb.sde.lognormal) {
    const double s = *mb.model.constant_sigma;
    double fb_dev = 0.0;
    for (std::size_t k = 0; k < fb.values.size(); ++k)
      fb_dev = std::max(fb_dev, std::abs(fb.values[k] - s * std::sqrt(fb.times[k] / 2.0)));
    rep.criteria.push_back(make_criterion("feedback-closed-form", fb_dev, "le", 1e-10));
  }
  if (mb.model.closed_form_available() && mb.model.payoff.kind == "call") {
    const double s = *mb.model.constant_sigma, r = *mb.model.constant_rate;
    const double strike = *mb.model.payoff.strike;
    const double t = mb.model.horizon;
    const double d1 =
        (std::log(mb.model.x0 / strike) + (r + 0.5 * s * s) * t) / (s * std::sqrt(t));
    const double delta = normal_cdf(d1);
    const double tol = mode == PricingMode::closed_form ? 1e-10 : 3.0 * h0_se;
    rep.criteria.push_back(make_criterion("hedge-oracle", std::abs(h0 - delta), "le", tol));
  }
  if (mb.model.payoff.kind == "constant") {
    rep.criteria.push_back(make_criterion("flat-payoff-zero-errors", std::max(max_gv, max_gh),
                                          "le", 0.0));
  }
  std::vector<double> gx_samples(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, threads, [&](std::int64_t i) {
    const DriverPaths d = make_drivers(n, refine, seed, i, mb.model.horizon, driver_set::driver);
    const FinancePath path_i = finance_path(mb, d);
    gx_samples[static_cast<std::size_t>(i)] = gamma_x(path_i, path_i.x.values.size() - 1);
  });
  const Estimate eg = mean_stderr(gx_samples, seed);
  rep.metrics["e_gamma_x_mean"] = eg.mean;
  rep.metrics["e_gamma_x_stderr"] = eg.std_error;
  rep.metrics["price_at_0"] = rows.front()[2];
  rep.metrics["hedge_at_0"] = h0;
  rep.metrics["pricing"] = pricing;

  write_csv(out_dir / "finance_path.csv",
            {"t", "X", "V", "H", "gammaX", "gammaV", "gammaH", "feedback"}, rows);
  rep.outputs.push_back("finance_path.csv");
  write_path_csv(out_dir / "feedback_path.csv", fb);
  rep.outputs.push_back("feedback_path.csv");
}

inline void run_asymptotic_principle(const nlohmann::json& cfg, std::uint64_t seed, int threads,
                                     const std::filesystem::path& out_dir, ExperimentReport& rep) {
  const ModelBundle mb = parse_model(cfg.at("model"));
  const PrincipleFunctional pf =
      make_principle_functional(cfg.value("functional", nlohmann::json{{"kind", "terminal"}}));
  const std::int64_t n = jint(cfg, "n", 256);
  const std::int64_t refine = jint(cfg, "refine", 64);
  const std::int64_t n_paths = jint(cfg, "n_paths", 3000);
  std::vector<double> gap(static_cast<std::size_t>(n_paths));
  std::vector<double> sharp(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, threads, [&](std::int64_t i) {
    const DriverPaths da = make_drivers(n, refine, seed, i, mb.model.horizon, driver_set::driver);
    gap[static_cast<std::size_t>(i)] = pf.scaled_gap(mb.sde, da);
    const DriverPaths db = make_drivers(n, refine, seed, n_paths + i, mb.model.horizon,
                                        driver_set::driver_copy);
    const TangentPath tp = simulate_tangent(mb.sde, mb.weight, db);
    sharp[static_cast<std::size_t>(i)] = pf.sharp_fn.sharp(tp, db);
  });
  const double ks = ks_distance(gap, sharp);
  rep.criteria.push_back(make_criterion("sharp-law-ks", ks, "le", jnum(cfg, "ks_threshold", 0.06)));
  const VarianceEstimate vg = variance_with_se(gap);
  const VarianceEstimate vsh = variance_with_se(sharp);
  const double rel_se = vsh.value > 0.0
                            ? (vg.std_error + vsh.std_error) / vsh.value
                            : 0.0;
  rep.criteria.push_back(make_criterion("variance-ratio-deviation",
                                        vsh.value > 0.0 ? std::abs(vg.value / vsh.value - 1.0)
                                                        : std::abs(vg.value),
                                        "le", jnum(cfg, "variance_tolerance", 0.1) + 3.0 * rel_se));
  rep.metrics["gap_variance"] = vg.value;
  rep.metrics["sharp_variance"] = vsh.value;
  rep.metrics["gap_mean"] = mean_stderr(gap).mean;
  rep.metrics["sharp_mean"] = mean_stderr(sharp).mean;
  std::vector<std::vector<double>> rows(gap.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = {gap[i], sharp[i]};
  write_csv(out_dir / "asymptotic_principle.csv", {"scaled_error", "sharp_sample"}, rows);
  rep.outputs.push_back("asymptotic_principle.csv");
}

inline void run_donsker(const nlohmann::json& cfg, std::uint64_t seed, int threads,
                        const std::filesystem::path& out_dir, ExperimentReport& rep) {
  const std::int64_t walk_n = jint(cfg, "walk_n", 2048);
  const std::int64_t n_paths = jint(cfg, "n_paths", 100000);
  const std::int64_t grid_n = jint(cfg, "grid_n", 16384);
  const std::int64_t brownian_paths = jint(cfg, "brownian_paths", n_paths);
  std::vector<double> walk_samples(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, threads, [&](std::int64_t i) {
    double s = 0.0, best = -1.0;
    std::int64_t kstar = 1;
    for (std::int64_t k = 1; k <= walk_n; ++k) {
      s += rng::normal_draw(seed, rng::chan_driver, static_cast<std::uint64_t>(i),
                            static_cast<std::uint64_t>(k));
      if (std::abs(s) > best) {
        best = std::abs(s);
        kstar = k;
      }
    }
    walk_samples[static_cast<std::size_t>(i)] =
        static_cast<double>(kstar) / static_cast<double>(walk_n);
  });
  std::vector<double> argmax_samples(static_cast<std::size_t>(brownian_paths));
  const double root_dt = std::sqrt(1.0 / static_cast<double>(grid_n));
  parallel_for(brownian_paths, threads, [&](std::int64_t i) {
    double b = 0.0, best = -1.0;
    std::int64_t kstar = 1;
    for (std::int64_t k = 1; k <= grid_n; ++k) {
      b += root_dt * rng::normal_draw(seed, rng::chan_extra, static_cast<std::uint64_t>(i),
                                      static_cast<std::uint64_t>(k));
      if (std::abs(b) > best) {
        best = std::abs(b);
        kstar = k;
      }
    }
    argmax_samples[static_cast<std::size_t>(i)] =
        static_cast<double>(kstar) / static_cast<double>(grid_n);
  });
  const Estimate left = mean_stderr(walk_samples, seed);
  const Estimate right = mean_stderr(argmax_samples, seed);
  const double band =
      3.0 * std::sqrt(left.std_error * left.std_error + right.std_error * right.std_error) +
      jnum(cfg, "discretization_allowance", 0.01);
  rep.criteria.push_back(
      make_criterion("gamma-mean-vs-argmax-law", std::abs(left.mean - right.mean), "le", band));
  rep.metrics["walk_mean"] = left.mean;
  rep.metrics["walk_stderr"] = left.std_error;
  rep.metrics["argmax_mean"] = right.mean;
  rep.metrics["argmax_stderr"] = right.std_error;
  std::vector<std::vector<double>> wrows(walk_samples.size());
  for (std::size_t i = 0; i < wrows.size(); ++i) wrows[i] = {walk_samples[i]};
  write_csv(out_dir / "donsker_walk.csv", {"kstar_over_n"}, wrows);
  std::vector<std::vector<double>> brows(argmax_samples.size());
  for (std::size_t i = 0; i < brows.size(); ++i) brows[i] = {argmax_samples[i]};
  write_csv(out_dir / "donsker_brownian.csv", {"argmax_time"}, brows);
  rep.outputs.push_back("donsker_walk.csv");
  rep.outputs.push_back("donsker_brownian.csv");
}

}  // namespace detail

/// Structural validation plus model-derivative checks; does not simulate.
inline void validate_config(const nlohmann::json& cfg) {
  if (!cfg.is_object()) throw std::invalid_argument("config must be a JSON object");
  const std::string exp = detail::jstr(cfg, "experiment", "");
  if (!detail::experiment_kinds().count(exp))
    throw std::invalid_argument("experiment must be one of euler-vs-limit, rootzen, gamma-check, "
                                "finance-report, asymptotic-principle, donsker");
  if (cfg.contains("seed") &&
      (!cfg.at("seed").is_number_integer() || cfg.at("seed").get<std::int64_t>() < 0))
    throw std::invalid_argument("seed must be a non-negative integer");
  if (exp == "euler-vs-limit") {
    detail::check_keys(cfg,
                       {"experiment", "seed", "threads", "n", "refine", "n_paths", "model",
                        "ks_threshold", "moment_tolerance"},
                       "config");
    detail::check_budget_floor(cfg, true);
    parse_model(cfg.at("model"));
  } else if (exp == "rootzen") {
    detail::check_keys(cfg, {"experiment", "seed", "threads", "n", "refine", "n_paths",
                             "integrand", "ks_threshold"},
                       "config");
    detail::check_budget_floor(cfg, true);
    detail::make_surface(cfg.value("integrand", nlohmann::json{{"kind", "identity"}}));
  } else if (exp == "gamma-check") {
    detail::check_keys(cfg, {"experiment", "seed", "threads", "n", "refine", "n_paths", "model",
                             "replicas", "check_paths", "min_fraction"},
                       "config");
    detail::check_budget_floor(cfg, true);
    if (detail::jint(cfg, "replicas", 256) < 2)
      throw std::invalid_argument("replicas must be >= 2");
    if (detail::jint(cfg, "check_paths", 100) < 1)
      throw std::invalid_argument("check_paths must be >= 1");
    parse_model(cfg.at("model"));
  } else if (exp == "finance-report") {
    detail::check_keys(cfg, {"experiment", "seed", "threads", "n", "refine", "n_paths", "model",
                             "pricing", "inner_paths", "sample_path"},
                       "config");
    detail::check_budget_floor(cfg, true);
    const ModelBundle mb = parse_model(cfg.at("model"));
    const std::string pricing = detail::jstr(cfg, "pricing", "");
    if (!pricing.empty() && pricing != "closed-form" && pricing != "nested-mc")
      throw std::invalid_argument("pricing must be closed-form or nested-mc");
    if (pricing == "closed-form" && !mb.model.closed_form_available())
      throw std::invalid_argument("closed-form pricing requires constant sigma and rate");
    if (detail::jint(cfg, "inner_paths", 1000) < 2)
      throw std::invalid_argument("inner_paths must be >= 2");
  } else if (exp == "asymptotic-principle") {
    detail::check_keys(cfg, {"experiment", "seed", "threads", "n", "refine", "n_paths", "model",
                             "functional", "ks_threshold", "variance_tolerance"},
                       "config");
    detail::check_budget_floor(cfg, true);
    parse_model(cfg.at("model"));
    detail::make_principle_functional(
        cfg.value("functional", nlohmann::json{{"kind", "terminal"}}));
  } else if (exp == "donsker") {
    detail::check_keys(cfg, {"experiment", "seed", "threads", "n_paths", "walk_n", "grid_n",
                             "brownian_paths", "discretization_allowance"},
                       "config");
    detail::check_budget_floor(cfg, false);
    if (detail::jint(cfg, "walk_n", 2048) < 16)
      throw std::invalid_argument("walk_n must be >= 16");
    if (detail::jint(cfg, "grid_n", 16384) < 16)
      throw std::invalid_argument("grid_n must be >= 16");
  }
}

inline ExperimentReport run_experiment(nlohmann::json cfg, const RunOptions& opts) {
  if (opts.seed) cfg["seed"] = *opts.seed;
  validate_config(cfg);
  if (!cfg.contains("seed"))
    throw std::invalid_argument("seed is required: set \"seed\" in the config or pass --seed");
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  int threads = static_cast<int>(detail::jint(cfg, "threads", 0));
  if (opts.threads) threads = *opts.threads;
  std::filesystem::create_directories(opts.out_dir);

  ExperimentReport rep;
  rep.experiment = cfg.at("experiment").get<std::string>();
  rep.seed = seed;
  rep.config = cfg;
  if (rep.experiment == "euler-vs-limit")
    detail::run_euler_vs_limit(cfg, seed, threads, opts.out_dir, rep);
  else if (rep.experiment == "rootzen")
    detail::run_rootzen(cfg, seed, threads, opts.out_dir, rep);
  else if (rep.experiment == "gamma-check")
    detail::run_gamma_check(cfg, seed, threads, opts.out_dir, rep);
  else if (rep.experiment == "finance-report")
    detail::run_finance_report(cfg, seed, threads, opts.out_dir, rep);
  else if (rep.experiment == "asymptotic-principle")
    detail::run_asymptotic_principle(cfg, seed, threads, opts.out_dir, rep);
  else
    detail::run_donsker(cfg, seed, threads, opts.out_dir, rep);
  return rep;
}

/// Full `run` orchestration: load, run, write report.json (an error record
/// on failure), print one line per criterion. Exit codes: 0 all pass,
/// 1 criteria failed, 2 configuration or simulation error.
inline int execute_run(const std::filesystem::path& config_path, const RunOptions& opts) {
  nlohmann::json cfg;
  try {
    cfg = read_json_file(config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    const ExperimentReport rep = run_experiment(cfg, opts);
    write_json_file(opts.out_dir / "report.json", rep.to_json());
    for (const Criterion& c : rep.criteria)
      std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << format_double(c.measured)
                << " " << c.comparison << " " << format_double(c.threshold) << "\n";
    std::cout << (rep.all_pass() ? "all criteria passed" : "criteria FAILED") << " ("
              << rep.experiment << ", seed " << rep.seed << ")\n";
    return rep.all_pass() ? 0 : 1;
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["experiment"] = cfg.is_object() ? cfg.value("experiment", "") : "";
    err["error"] = e.what();
    err["pass"] = false;
    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    try {
      write_json_file(opts.out_dir / "report.json", err);
    } catch (...) {
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

inline int execute_validate(const std::filesystem::path& config_path) {
  try {
    validate_config(read_json_file(config_path));
    std::cout << "config ok\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace dirform
