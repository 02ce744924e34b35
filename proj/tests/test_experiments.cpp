#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include "dirform/experiments.hpp"
#include "dirform/io.hpp"
#include "test_models.hpp"

namespace fs = std::filesystem;
using namespace dirform;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("dirform_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json benchmark_model() {
  return {{"sigma", {{"kind", "constant"}, {"value", 0.2}}},
          {"r", 0.05},
          {"x0", 100.0},
          {"T", 1.0},
          {"payoff", {{"kind", "call"}, {"K", 100.0}}}};
}

}  // namespace

TEST_CASE("format_double round-trips and prefers plain notation") {
  for (double v : {0.1, 100.0, 9.20219039085781814, 1e-300, 3.0, 0.25, -7.125}) {
    const std::string s = format_double(v);
    REQUIRE(std::stod(s) == v);
  }
  REQUIRE(format_double(100.0) == "100");
  REQUIRE(format_double(0.5) == "0.5");
}

TEST_CASE("write_csv rejects ragged rows and round-trips values") {
  const fs::path dir = fresh_dir("csv");
  REQUIRE_THROWS_AS(write_csv(dir / "bad.csv", {"a", "b"}, {{1.0}}), std::invalid_argument);
  write_csv(dir / "ok.csv", {"a", "b"}, {{1.0, 2.5}, {-3.0, 0.125}});
  const std::string text = slurp(dir / "ok.csv");
  REQUIRE(text == "a,b\n1,2.5\n-3,0.125\n");
  REQUIRE_THROWS_AS(write_csv(dir / "no_such_dir" / "x.csv", {"a"}, {{1.0}}),
                    std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("path and increment CSV exports") {
  const fs::path dir = fresh_dir("csv2");
  PathGrid g;
  g.times = {0.0, 0.5, 1.0};
  g.values = {1.0, 2.0, 3.0};
  write_path_csv(dir / "p.csv", g);
  const std::string text = slurp(dir / "p.csv");
  REQUIRE(text.substr(0, 11) == "time,value\n");
  REQUIRE(std::count(text.begin(), text.end(), '\n') == 4);

  const DriverPaths d = make_drivers(4, 2, 3, 0, 1.0, driver_set::driver_extra);
  write_increments_csv(dir / "inc.csv", d);
  const std::string inc = slurp(dir / "inc.csv");
  REQUIRE(inc.substr(0, 11) == "step,db,dw\n");
  REQUIRE(std::count(inc.begin(), inc.end(), '\n') == 9);
  fs::remove_all(dir);
}

TEST_CASE("read_json_file reports the offending file") {
  const fs::path dir = fresh_dir("json");
  REQUIRE_THROWS_AS(read_json_file(dir / "missing.json"), std::runtime_error);
  std::ofstream(dir / "broken.json") << "{not json";
  try {
    read_json_file(dir / "broken.json");
    FAIL("expected a parse failure");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()).find("broken.json") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("make_criterion comparisons") {
  REQUIRE(make_criterion("a", 1.0, "lt", 2.0).pass);
  REQUIRE_FALSE(make_criterion("a", 2.0, "lt", 2.0).pass);
  REQUIRE(make_criterion("a", 2.0, "le", 2.0).pass);
  REQUIRE(make_criterion("a", 2.0, "ge", 2.0).pass);
  REQUIRE_FALSE(make_criterion("a", 1.0, "ge", 2.0).pass);
  REQUIRE_FALSE(make_criterion("a", std::nan(""), "le", 2.0).pass);
  REQUIRE_THROWS_AS(make_criterion("a", 1.0, "eq", 1.0), std::invalid_argument);
}

TEST_CASE("config validation accepts one of each kind") {
  validate_config({{"experiment", "euler-vs-limit"}, {"seed", 1}, {"model", benchmark_model()}});
  validate_config({{"experiment", "rootzen"}, {"seed", 1}});
  validate_config({{"experiment", "gamma-check"}, {"seed", 1}, {"model", benchmark_model()}});
  validate_config({{"experiment", "finance-report"}, {"seed", 1}, {"model", benchmark_model()}});
  validate_config({{"experiment", "asymptotic-principle"},
                   {"seed", 1},
                   {"model", benchmark_model()},
                   {"functional", {{"kind", "state-integral"}, {"f", "identity"}}}});
  validate_config({{"experiment", "donsker"}, {"seed", 1}});
}

TEST_CASE("config validation rejections") {
  REQUIRE_THROWS_AS(validate_config({{"experiment", "bogus"}}), std::invalid_argument);
  REQUIRE_THROWS_AS(validate_config({{"experiment", "rootzen"}, {"seed", 1}, {"n", 8}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(validate_config({{"experiment", "rootzen"}, {"seed", 1}, {"refine", 4}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(validate_config({{"experiment", "rootzen"}, {"seed", 1}, {"n_paths", 10}}),
                    std::invalid_argument);
  // rootzen takes no model
  REQUIRE_THROWS_AS(
      validate_config({{"experiment", "rootzen"}, {"seed", 1}, {"model", benchmark_model()}}),
      std::invalid_argument);
  REQUIRE_THROWS_AS(validate_config({{"experiment", "donsker"}, {"seed", 1}, {"walk_n", 2}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(validate_config({{"experiment", "donsker"}, {"seed", -3}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      validate_config({{"experiment", "gamma-check"}, {"seed", 1}, {"model", benchmark_model()},
                       {"replicas", 1}}),
      std::invalid_argument);

  nlohmann::json bad_sigma = benchmark_model();
  bad_sigma["sigma"]["value"] = -0.2;
  REQUIRE_THROWS_AS(
      validate_config({{"experiment", "euler-vs-limit"}, {"seed", 1}, {"model", bad_sigma}}),
      std::domain_error);

  nlohmann::json bad_payoff = benchmark_model();
  bad_payoff["payoff"] = {{"kind", "digital"}, {"K", 100.0}};
  REQUIRE_THROWS_AS(
      validate_config({{"experiment", "euler-vs-limit"}, {"seed", 1}, {"model", bad_payoff}}),
      std::invalid_argument);

  // closed-form pricing demands a constant-coefficient model
  nlohmann::json cev = benchmark_model();
  cev["sigma"] = {{"kind", "cev"}, {"beta", 0.8}, {"anchor_level", 100.0}, {"anchor_sigma", 0.2}};
  REQUIRE_THROWS_AS(validate_config({{"experiment", "finance-report"},
                                     {"seed", 1},
                                     {"model", cev},
                                     {"pricing", "closed-form"}}),
                    std::invalid_argument);
  validate_config(
      {{"experiment", "finance-report"}, {"seed", 1}, {"model", cev}, {"pricing", "nested-mc"}});

  REQUIRE_THROWS_AS(validate_config({{"experiment", "rootzen"}, {"seed", 1}, {"bogus", 1}}),
                    std::invalid_argument);
}

TEST_CASE("report schema") {
  ExperimentReport rep;
  rep.experiment = "rootzen";
  rep.seed = 9;
  rep.config = {{"experiment", "rootzen"}};
  rep.criteria.push_back(make_criterion("x", 1.0, "le", 2.0));
  rep.outputs.push_back("a.csv");
  const nlohmann::json doc = rep.to_json();
  for (const char* key : {"experiment", "seed", "config", "criteria", "metrics", "outputs", "pass"})
    REQUIRE(doc.contains(key));
  REQUIRE(doc["pass"].get<bool>());
  const nlohmann::json& c = doc["criteria"][0];
  for (const char* key : {"name", "measured", "threshold", "comparison", "pass"})
    REQUIRE(c.contains(key));
  rep.criteria.push_back(make_criterion("y", 3.0, "le", 2.0));
  REQUIRE_FALSE(rep.all_pass());
}

TEST_CASE("run_experiment writes the declared outputs and is reproducible") {
  nlohmann::json cfg = {{"experiment", "euler-vs-limit"}, {"seed", 42},       {"n", 16},
                        {"refine", 16},                   {"n_paths", 1000},  {"model", benchmark_model()}};
  const fs::path dir_a = fresh_dir("run_a");
  RunOptions opts;
  opts.out_dir = dir_a;
  opts.threads = 1;
  const ExperimentReport rep = run_experiment(cfg, opts);
  REQUIRE_FALSE(rep.criteria.empty());
  write_json_file(dir_a / "report.json", rep.to_json());
  for (const std::string& name : rep.outputs) REQUIRE(fs::exists(dir_a / name));

  const fs::path dir_b = fresh_dir("run_b");
  opts.out_dir = dir_b;
  const ExperimentReport rep2 = run_experiment(cfg, opts);
  write_json_file(dir_b / "report.json", rep2.to_json());
  REQUIRE(slurp(dir_a / "report.json") == slurp(dir_b / "report.json"));
  REQUIRE(slurp(dir_a / "euler_vs_limit.csv") == slurp(dir_b / "euler_vs_limit.csv"));

  // identical results for any worker count
  const fs::path dir_c = fresh_dir("run_c");
  opts.out_dir = dir_c;
  opts.threads = 4;
  const ExperimentReport rep3 = run_experiment(cfg, opts);
  write_json_file(dir_c / "report.json", rep3.to_json());
  REQUIRE(slurp(dir_a / "report.json") == slurp(dir_c / "report.json"));

  // --seed override lands in the echoed config
  opts.seed = 43;
  const fs::path dir_d = fresh_dir("run_d");
  opts.out_dir = dir_d;
  const ExperimentReport rep4 = run_experiment(cfg, opts);
  REQUIRE(rep4.seed == 43);
  REQUIRE(rep4.config.at("seed").get<int>() == 43);

  for (const fs::path& p : {dir_a, dir_b, dir_c, dir_d}) fs::remove_all(p);
}

TEST_CASE("run_experiment requires a seed") {
  nlohmann::json cfg = {{"experiment", "rootzen"}, {"n", 16}, {"refine", 16}, {"n_paths", 1000}};
  RunOptions opts;
  opts.out_dir = fresh_dir("noseed");
  REQUIRE_THROWS_AS(run_experiment(cfg, opts), std::invalid_argument);
  opts.seed = 5;
  const ExperimentReport rep = run_experiment(cfg, opts);
  REQUIRE(rep.seed == 5);
  fs::remove_all(opts.out_dir);
}

TEST_CASE("execute_run exit codes") {
  const fs::path dir = fresh_dir("exec");
  RunOptions opts;
  opts.out_dir = dir / "out";
  REQUIRE(execute_run(dir / "missing.json", opts) == 2);

  nlohmann::json cfg = {{"experiment", "rootzen"},     {"seed", 8},        {"n", 16},
                        {"refine", 16},                {"n_paths", 1000},
                        {"integrand", {{"kind", "identity"}}}};
  write_json_file(dir / "ok.json", cfg);
  REQUIRE(execute_run(dir / "ok.json", opts) == 0);
  REQUIRE(fs::exists(opts.out_dir / "report.json"));

  cfg["ks_threshold"] = 1e-6;  // unattainable: forces a failing criterion
  write_json_file(dir / "fail.json", cfg);
  opts.out_dir = dir / "out_fail";
  REQUIRE(execute_run(dir / "fail.json", opts) == 1);
  const nlohmann::json rep = read_json_file(opts.out_dir / "report.json");
  REQUIRE_FALSE(rep.at("pass").get<bool>());

  write_json_file(dir / "bad.json", nlohmann::json{{"experiment", "bogus"}});
  opts.out_dir = dir / "out_bad";
  REQUIRE(execute_run(dir / "bad.json", opts) == 2);
  const nlohmann::json err = read_json_file(opts.out_dir / "report.json");
  REQUIRE_FALSE(err.at("pass").get<bool>());
  REQUIRE(err.contains("error"));
  fs::remove_all(dir);
}

TEST_CASE("driver recovery from the scheme's own path collapses") {
  // Inverting the Euler update reproduces the coarse increments identically,
  // which is why the discretization-gap pipeline recovers the driver from
  // the reference path instead.
  const SdeSpec spec = testmodels::lognormal_spec(0.2, 0.05, 100.0);
  const DriverPaths d = make_drivers(16, 8, 77, 0, 1.0, driver_set::driver);
  const PathGrid euler = euler_path(spec, d);
  const std::vector<double> dbc = coarse_increments(d.db, d.refine);
  const double dtc = d.dt_coarse();
  for (std::size_t k = 0; k + 1 < euler.values.size(); ++k) {
    const double a = spec.a(euler.values[k], euler.times[k]);
    const double b = spec.b(euler.values[k], euler.times[k]);
    const double recon = (euler.values[k + 1] - euler.values[k]) / a - b / a * dtc;
    REQUIRE(std::abs(recon - dbc[k]) < 1e-10);
  }
}

TEST_CASE("frozen-coefficient interpolant matches its own knots and the fine scheme") {
  const SdeSpec spec = testmodels::sine_diffusion_spec(2.0);
  const DriverPaths d = make_drivers(16, 8, 91, 0, 1.0, driver_set::driver);
  const std::vector<double> interp = detail::coarse_interpolant_fine_values(spec, d);
  const PathGrid knots = euler_path(spec, d);
  const std::vector<double> at_knots = subsample(interp, d.refine);
  for (std::size_t k = 0; k < at_knots.size(); ++k)
    REQUIRE(at_knots[k] == Catch::Approx(knots.values[k]).margin(1e-12));

  const DriverPaths flat = make_drivers(16, 1, 91, 0, 1.0, driver_set::driver);
  REQUIRE(detail::coarse_interpolant_fine_values(spec, flat) == fine_euler_values(spec, flat));
}

TEST_CASE("quadrature oracle for the integral-error variance") {
  SurfaceFn identity;
  identity.value = [](double x, double) { return x; };
  identity.deriv_x = [](double, double) { return 1.0; };
  REQUIRE(detail::rootzen_oracle(identity) == Catch::Approx(0.5).margin(1e-12));
  SurfaceFn sine;
  sine.value = [](double x, double) { return std::sin(x); };
  sine.deriv_x = [](double x, double) { return std::cos(x); };
  REQUIRE(detail::rootzen_oracle(sine) == Catch::Approx(0.358083089595423).margin(1e-9));
}

TEST_CASE("sample-moment helpers") {
  const std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
  const detail::VarianceEstimate v = detail::variance_with_se(a);
  REQUIRE(v.value == Catch::Approx(1.25).margin(1e-15));  // population variance
  REQUIRE(v.std_error > 0.0);
  REQUIRE(detail::correlation(a, a) == Catch::Approx(1.0).margin(1e-15));
  const std::vector<double> b = {4.0, 3.0, 2.0, 1.0};
  REQUIRE(detail::correlation(a, b) == Catch::Approx(-1.0).margin(1e-15));
}

TEST_CASE("payoff and model parsing") {
  REQUIRE(parse_payoff({{"kind", "call"}, {"K", 90.0}}).strike.value() == 90.0);
  REQUIRE(parse_payoff({{"kind", "smoothed-call"}, {"K", 90.0}, {"smoothing", 2.0}}).smooth2);
  REQUIRE(parse_payoff({{"kind", "constant"}, {"value", 3.0}}).value(50.0) == 3.0);
  REQUIRE_THROWS_AS(parse_payoff({{"kind", "call"}}), std::invalid_argument);

  const ModelBundle mb = parse_model(benchmark_model());
  REQUIRE(mb.model.constant_sigma.value() == 0.2);
  REQUIRE(mb.sde.lognormal.has_value());

  nlohmann::json anchored = benchmark_model();
  anchored["sigma"] = {{"kind", "cev"}, {"beta", 0.8}, {"anchor_level", 100.0},
                       {"anchor_sigma", 0.2}};
  const ModelBundle cev = parse_model(anchored);
  REQUIRE(cev.model.sigma(100.0, 0.0) == Catch::Approx(0.2).margin(1e-13));

  nlohmann::json table = benchmark_model();
  table["sigma"] = {{"kind", "table"},
                    {"levels", {50.0, 100.0, 150.0}},
                    {"sigmas", {0.3, 0.2, 0.15}}};
  const ModelBundle tab = parse_model(table);
  REQUIRE(tab.model.sigma(100.0, 0.0) == Catch::Approx(0.2).margin(1e-12));
}
