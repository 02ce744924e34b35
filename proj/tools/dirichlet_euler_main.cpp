#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dirform/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Dirichlet-form error calculus for the Euler scheme on 1-D SDEs"};
  app.require_subcommand(1);

  std::string run_config;
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  CLI::App* run = app.add_subcommand("run", "Run an experiment and write report.json + CSVs");
  run->add_option("config", run_config, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Output directory (default: current)");
  run->add_option("--threads", threads, "Worker threads (0 = hardware)");

  std::string check_config;
  CLI::App* validate =
      app.add_subcommand("validate", "Check a config and its model derivatives, then exit");
  validate->add_option("config", check_config, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      dirform::RunOptions opts;
      opts.out_dir = out_dir;
      opts.seed = seed;
      opts.threads = threads;
      return dirform::execute_run(run_config, opts);
    }
    return dirform::execute_validate(check_config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
