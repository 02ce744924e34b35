#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "dirform/limit_law.hpp"
#include "dirform/parallel.hpp"
#include "dirform/stats.hpp"
#include "test_models.hpp"

using namespace dirform;

namespace {

Estimate variance_estimate(const std::vector<double>& xs) {
  // Mean and stderr of squared deviations; the mean is a variance estimate
  // with a fourth-moment stderr.
  const double mean = mean_stderr(xs).mean;
  std::vector<double> sq(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - mean) * (xs[i] - mean);
  return mean_stderr(sq);
}

}  // namespace

TEST_CASE("limit error vanishes for state-independent coefficients") {
  const LimitPair lp = simulate_limit_pair(testmodels::additive_spec(0.0), make_drivers(8, 8, 3));
  for (double u : lp.u.values) REQUIRE(u == 0.0);
  for (double m : lp.m) REQUIRE(m == 1.0);
}

TEST_CASE("limit error is linear in the extra driver") {
  const SdeSpec spec = testmodels::lognormal_spec(0.2, 0.05, 100.0);
  DriverPaths d = make_drivers(16, 8, 21);
  const LimitPair base = simulate_limit_pair(spec, d);
  for (double& w : d.dw) w *= 2.0;
  const LimitPair doubled = simulate_limit_pair(spec, d);
  for (std::size_t k = 0; k < base.u.values.size(); ++k)
    REQUIRE(doubled.u.values[k] == 2.0 * base.u.values[k]);
}

TEST_CASE("missing extra driver is rejected") {
  const DriverPaths d = make_drivers(8, 8, 3, 0, 1.0, driver_set::driver);
  REQUIRE_THROWS_AS(simulate_limit_pair(testmodels::lognormal_spec(1.0, 0.0, 1.0), d),
                    std::invalid_argument);
}

TEST_CASE("terminal second moment of the limit error for the unit lognormal") {
  const SdeSpec spec = testmodels::lognormal_spec(1.0, 0.0, 1.0);
  const std::int64_t n_paths = 50000;
  std::vector<double> u1(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, 0, [&](std::int64_t i) {
    const DriverPaths d = make_drivers(64, 16, 29, i, 1.0, driver_set::driver_extra);
    u1[static_cast<std::size_t>(i)] = simulate_limit_pair(spec, d).u.values.back();
  });
  const Estimate mean = mean_stderr(u1);
  REQUIRE(std::abs(mean.mean) < 3.0 * mean.std_error);

  std::vector<double> sq(u1.size());
  for (std::size_t i = 0; i < u1.size(); ++i) sq[i] = u1[i] * u1[i];
  const Estimate second = mean_stderr(sq);
  REQUIRE(std::abs(second.mean - 1.35914091422952262) < 3.0 * second.std_error);
}

TEST_CASE("variation of constants collapses to X W / sqrt(2) for the unit lognormal") {
  const SdeSpec spec = testmodels::lognormal_spec(1.0, 0.0, 1.0);
  for (std::int64_t path = 0; path < 20; ++path) {
    const DriverPaths d = make_drivers(16, 16, 57, path, 1.0, driver_set::driver_extra);
    const PathGrid u = variation_of_constants(spec, d);
    const std::vector<double> x = reference_fine_values(spec, d);
    double w = 0.0;
    for (std::size_t k = 0; k + 1 < x.size(); ++k) w += d.dw[k];
    const double expected = x.back() * w * 0.7071067811865475244;
    REQUIRE(u.values.back() == Catch::Approx(expected).margin(1e-12 * std::max(1.0, std::abs(expected))));
  }
}

TEST_CASE("variation of constants tracks the direct scheme") {
  const std::int64_t n_paths = 200;
  for (const SdeSpec& spec :
       {testmodels::lognormal_spec(0.2, 0.05, 100.0), testmodels::sine_diffusion_spec(0.5)}) {
    std::vector<double> diff_sq(static_cast<std::size_t>(n_paths)), ref_sq(static_cast<std::size_t>(n_paths));
    parallel_for(n_paths, 0, [&](std::int64_t i) {
      const DriverPaths d = make_drivers(16, 256, 61, i, 1.0, driver_set::driver_extra);
      const double direct = simulate_limit_pair(spec, d).u.values.back();
      const double closed = variation_of_constants(spec, d).values.back();
      diff_sq[static_cast<std::size_t>(i)] = (closed - direct) * (closed - direct);
      ref_sq[static_cast<std::size_t>(i)] = direct * direct;
    });
    const double rel_rms =
        std::sqrt(mean_stderr(diff_sq).mean) / std::sqrt(mean_stderr(ref_sq).mean);
    REQUIRE(rel_rms < 0.02);
  }
}

TEST_CASE("first variation blow-up is reported") {
  SdeSpec spec = testmodels::constant_spec(1.0);
  spec.b = [](double x, double) { return 1e7 * x; };
  spec.b_x = [](double, double) { return 1e7; };
  spec.x0 = 1.0;
  REQUIRE_THROWS_AS(simulate_limit_pair(spec, make_drivers(4, 4, 3)), std::runtime_error);
}

TEST_CASE("brownian integral error cancels exactly for constant integrands") {
  const SurfaceFn constant{[](double, double) { return 2.5; }, [](double, double) { return 0.0; }};
  for (std::int64_t path = 0; path < 10; ++path) {
    const RootzenSample r = rootzen_error(constant, make_drivers(32, 16, 71, path));
    REQUIRE(r.scaled_error == 0.0);
    REQUIRE(r.limit_sample == 0.0);
  }
}

TEST_CASE("brownian integral error derivative validation") {
  const SurfaceFn wrong{[](double x, double) { return x * x; }, [](double x, double) { return x; }};
  REQUIRE_THROWS_AS(rootzen_error(wrong, make_drivers(4, 4, 3)), std::invalid_argument);
}

TEST_CASE("scaled error of the identity integrand has variance near one half") {
  const SurfaceFn identity{[](double x, double) { return x; }, [](double, double) { return 1.0; }};
  const std::int64_t n_paths = 20000, n = 64, refine = 64;
  std::vector<double> err(static_cast<std::size_t>(n_paths)), lim(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, 0, [&](std::int64_t i) {
    const RootzenSample r = rootzen_error(identity, make_drivers(n, refine, 83, i));
    err[static_cast<std::size_t>(i)] = r.scaled_error;
    lim[static_cast<std::size_t>(i)] = r.limit_sample;
  });
  // The fine-grid reference biases the variance by the factor 1 - 1/refine.
  const Estimate v_err = variance_estimate(err);
  REQUIRE(std::abs(v_err.mean - 0.5 * (1.0 - 1.0 / static_cast<double>(refine))) <
          3.0 * v_err.std_error);
  const Estimate v_lim = variance_estimate(lim);
  REQUIRE(std::abs(v_lim.mean - 0.5) < 3.0 * v_lim.std_error);
}

TEST_CASE("sinusoidal integrand limit variance") {
  const SurfaceFn sine{[](double x, double) { return std::sin(x); },
                       [](double x, double) { return std::cos(x); }};
  const std::int64_t n_paths = 20000;
  std::vector<double> lim(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, 0, [&](std::int64_t i) {
    lim[static_cast<std::size_t>(i)] = rootzen_error(sine, make_drivers(64, 16, 97, i)).limit_sample;
  });
  const Estimate v = variance_estimate(lim);
  REQUIRE(std::abs(v.mean - 0.358083089595423) < 3.0 * v.std_error);
}

TEST_CASE("scaled euler error converges to the limit law in distribution") {
  const SdeSpec spec = testmodels::lognormal_spec(1.0, 0.0, 1.0);
  const std::int64_t n_paths = 3000;
  std::vector<double> scaled(static_cast<std::size_t>(n_paths)), limit(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, 0, [&](std::int64_t i) {
    const DriverPaths d = make_drivers(256, 64, 103, i, 1.0, driver_set::driver_extra);
    scaled[static_cast<std::size_t>(i)] = scaled_error_path(spec, d).values.back();
    limit[static_cast<std::size_t>(i)] = simulate_limit_pair(spec, d).u.values.back();
  });
  REQUIRE(ks_distance(scaled, limit) < 0.05);

  std::vector<double> sq_s(scaled.size()), sq_l(limit.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    sq_s[i] = scaled[i] * scaled[i];
    sq_l[i] = limit[i] * limit[i];
  }
  REQUIRE(mean_stderr(sq_s).mean == Catch::Approx(mean_stderr(sq_l).mean).epsilon(0.10));
}
