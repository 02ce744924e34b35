#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "dirform/parallel.hpp"
#include "dirform/sde.hpp"
#include "dirform/stats.hpp"
#include "test_models.hpp"

using namespace dirform;

TEST_CASE("make_drivers is reproducible and keyed by path index") {
  const DriverPaths d1 = make_drivers(8, 4, 99, 5);
  const DriverPaths d2 = make_drivers(8, 4, 99, 5);
  REQUIRE(d1.db == d2.db);
  REQUIRE(d1.dw == d2.dw);
  REQUIRE(d1.dbhat == d2.dbhat);
  REQUIRE(d1.n_fine == 32);

  const DriverPaths other = make_drivers(8, 4, 99, 6);
  REQUIRE(d1.db != other.db);

  DriverPaths r = make_drivers(8, 4, 99, 5);
  regenerate_copy(r, 3);
  REQUIRE(r.dbhat != d1.dbhat);
  regenerate_copy(r, 0);
  REQUIRE(r.dbhat == d1.dbhat);
}

TEST_CASE("driver channels are mutually distinct") {
  const DriverPaths d = make_drivers(4, 2, 7);
  REQUIRE(d.db != d.dw);
  REQUIRE(d.db != d.dbhat);
  REQUIRE(d.dw != d.dbhat);
}

TEST_CASE("lazy channel selection skips unneeded noise") {
  const DriverPaths d = make_drivers(4, 2, 7, 0, 1.0, driver_set::driver);
  REQUIRE(d.db.size() == 8);
  REQUIRE(d.dw.empty());
  REQUIRE(d.dbhat.empty());
  REQUIRE(d.db == make_drivers(4, 2, 7).db);
}

TEST_CASE("grid validation") {
  REQUIRE_THROWS_AS(make_drivers(0, 4, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(make_drivers(4, 0, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(make_drivers(1 << 20, 1 << 20, 1), std::overflow_error);
  REQUIRE_THROWS_AS(make_drivers(4, 4, 1, 0, -1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(make_drivers(4, 4, 1, -1), std::invalid_argument);
}

TEST_CASE("coarse increments are exact block sums") {
  const DriverPaths d = make_drivers(16, 8, 314);
  const std::vector<double> coarse = coarse_increments(d.db, d.refine);
  REQUIRE(coarse.size() == 16);
  for (std::size_t k = 0; k < coarse.size(); ++k) {
    double s = 0.0;
    for (std::int64_t r = 0; r < d.refine; ++r) s += d.db[k * 8 + static_cast<std::size_t>(r)];
    REQUIRE(coarse[k] == s);
  }
  REQUIRE_THROWS_AS(coarse_increments(d.db, 7), std::invalid_argument);
}

TEST_CASE("subsample picks every refine-th point") {
  const std::vector<double> fine{0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  REQUIRE(subsample(fine, 4) == std::vector<double>{0.0, 4.0, 8.0});
  REQUIRE_THROWS_AS(subsample(fine, 3), std::invalid_argument);
}

TEST_CASE("driver increment variance at one fine step") {
  const std::int64_t n_paths = 1000000;
  std::vector<double> z(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, 0, [&](std::int64_t i) {
    z[static_cast<std::size_t>(i)] = rng::normal_draw(2026, rng::chan_driver, static_cast<std::uint64_t>(i), 0);
  });
  double m2 = 0.0;
  for (double v : z) m2 += v * v;
  m2 /= static_cast<double>(n_paths);
  REQUIRE(std::abs(m2 - 1.0) < 0.003);
}

TEST_CASE("validate_spec accepts correct coefficients and rejects wrong ones") {
  SdeSpec good = testmodels::lognormal_spec(0.2, 0.05, 100.0);
  REQUIRE_NOTHROW(validate_spec(good));

  SdeSpec bad = good;
  bad.a_x = [](double, double) { return 0.3; };
  REQUIRE_THROWS_AS(validate_spec(bad), std::invalid_argument);

  SdeSpec missing = good;
  missing.a_xx = nullptr;
  REQUIRE_THROWS_AS(validate_spec(missing), std::invalid_argument);
}

TEST_CASE("euler on zero coefficients is constant") {
  const DriverPaths d = make_drivers(16, 2, 5);
  const PathGrid x = euler_path(testmodels::constant_spec(3.5), d);
  REQUIRE(x.values.size() == 17);
  for (double v : x.values) REQUIRE(v == 3.5);
  REQUIRE(x.times.front() == 0.0);
  REQUIRE(x.times.back() == 1.0);
}

TEST_CASE("euler on pure drift matches the compounding product") {
  const DriverPaths d = make_drivers(100, 1, 5);
  const PathGrid x = euler_path(testmodels::drift_only_spec(1.0), d);
  REQUIRE(x.values.back() == Catch::Approx(2.704813829421526).epsilon(1e-12));
}

TEST_CASE("euler scheme keeps the martingale mean") {
  const std::int64_t n_paths = 10000;
  const SdeSpec spec = testmodels::lognormal_spec(1.0, 0.0, 1.0);
  std::vector<double> xt(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, 0, [&](std::int64_t i) {
    const DriverPaths d = make_drivers(64, 1, 11, i, 1.0, driver_set::driver);
    xt[static_cast<std::size_t>(i)] = euler_path(spec, d).values.back();
  });
  const Estimate est = mean_stderr(xt);
  REQUIRE(std::abs(est.mean - 1.0) < 3.0 * est.std_error);
}

TEST_CASE("euler blow-up reports the offending step") {
  SdeSpec spec = testmodels::drift_only_spec(1e308);
  const DriverPaths d = make_drivers(8, 1, 5);
  try {
    euler_path(spec, d);
    FAIL("expected blow_up_error");
  } catch (const blow_up_error& e) {
    // x grows by 1.125 per step from 1e308; the fifth step crosses DBL_MAX.
    REQUIRE(e.step == 4);
  }
}

TEST_CASE("exact lognormal reference has the lognormal mean") {
  const std::int64_t n_paths = 10000;
  const SdeSpec spec = testmodels::lognormal_spec(0.2, 0.05, 100.0);
  std::vector<double> xt(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, 0, [&](std::int64_t i) {
    const DriverPaths d = make_drivers(4, 2, 17, i, 1.0, driver_set::driver);
    xt[static_cast<std::size_t>(i)] = reference_path(spec, d).values.back();
  });
  const Estimate est = mean_stderr(xt);
  REQUIRE(std::abs(est.mean - 105.12710963760240) < 3.0 * est.std_error);
}

TEST_CASE("fine euler converges to the exact path at strong order one half") {
  const SdeSpec spec = testmodels::lognormal_spec(0.2, 0.05, 100.0);
  const std::int64_t n_paths = 400;
  std::vector<double> log_n, log_rms;
  for (std::int64_t refine : {16, 64, 256}) {
    std::vector<double> sq(static_cast<std::size_t>(n_paths));
    parallel_for(n_paths, 0, [&](std::int64_t i) {
      const DriverPaths d = make_drivers(16, refine, 23, i, 1.0, driver_set::driver);
      const std::vector<double> euler = fine_euler_values(spec, d);
      const std::vector<double> exact = reference_fine_values(spec, d);
      const double diff = euler.back() - exact.back();
      sq[static_cast<std::size_t>(i)] = diff * diff;
    });
    log_n.push_back(std::log(static_cast<double>(16 * refine)));
    log_rms.push_back(0.5 * std::log(mean_stderr(sq).mean));
  }
  const double slope =
      (log_rms.back() - log_rms.front()) / (log_n.back() - log_n.front());
  REQUIRE(slope == Catch::Approx(-0.5).margin(0.15));
}

TEST_CASE("scaled error vanishes identically when the grids coincide") {
  const SdeSpec spec = testmodels::lognormal_spec(0.2, 0.05, 100.0);
  const DriverPaths d = make_drivers(64, 1, 9);
  const PathGrid err = scaled_error_path(spec, d, /*use_exact=*/false);
  for (double v : err.values) REQUIRE(v == 0.0);
}

TEST_CASE("normalized terminal error is Cauchy in n") {
  const SdeSpec spec = testmodels::lognormal_spec(1.0, 0.0, 1.0);
  const std::int64_t n_paths = 20000;
  double prev = 0.0, curr = 0.0;
  for (std::int64_t n : {64, 256}) {
    std::vector<double> sq(static_cast<std::size_t>(n_paths));
    parallel_for(n_paths, 0, [&](std::int64_t i) {
      const DriverPaths d = make_drivers(n, 16, 31, i, 1.0, driver_set::driver);
      const double e = scaled_error_path(spec, d).values.back();
      sq[static_cast<std::size_t>(i)] = e * e;
    });
    prev = curr;
    curr = mean_stderr(sq).mean;
  }
  REQUIRE(std::abs(curr - prev) < 0.15 * std::abs(curr));
}

TEST_CASE("scaled terminal error second moment matches the limit law") {
  const SdeSpec spec = testmodels::lognormal_spec(0.2, 0.05, 100.0);
  const std::int64_t n_paths = 10000;
  std::vector<double> sq(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, 0, [&](std::int64_t i) {
    const DriverPaths d = make_drivers(256, 64, 41, i, 1.0, driver_set::driver);
    const double e = scaled_error_path(spec, d).values.back();
    sq[static_cast<std::size_t>(i)] = e * e;
  });
  REQUIRE(mean_stderr(sq).mean == Catch::Approx(9.20219039085781814).epsilon(0.10));
}
