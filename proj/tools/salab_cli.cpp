// Command-line front end: `salab run <config>` executes every analysis the
// config asks for, `salab validate <config>` just checks it.  Exit codes:
// 0 success, 1 runtime or analysis failure, 2 configuration problem.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <iostream>

#include "salab/config.hpp"
#include "salab/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"constant-stepsize stochastic approximation laboratory"};
  app.require_subcommand(1);

  std::string input_path;
  std::string output_dir;
  int threads = 0;
  std::uint64_t seed_override = 0;

  CLI::App* run = app.add_subcommand(
      "run", "run the configured analyses (accepts a config file or a manifest.json)");
  run->add_option("input", input_path, "config file, or manifest.json to reproduce a run")
      ->required();
  run->add_option("--output-dir", output_dir, "write outputs here instead of [run] output_dir");
  run->add_option("--threads", threads,
                  "worker threads for replica fan-out (default: hardware concurrency)")
      ->check(CLI::PositiveNumber);
  CLI::Option* seed_opt =
      run->add_option("--seed-override", seed_override, "replace the config's master seed");

  CLI::App* validate = app.add_subcommand("validate", "check a config without running anything");
  validate->add_option("input", input_path, "config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) {
      salab::load_config_file(input_path);
      std::printf("%s: ok\n", input_path.c_str());
      return 0;
    }

    salab::ExperimentConfig cfg = salab::looks_like_manifest(input_path)
                                      ? salab::config_from_manifest(input_path)
                                      : salab::load_config_file(input_path);
    salab::RunOptions opts;
    opts.output_dir_override = output_dir;
    opts.threads = threads;
    if (seed_opt->count() > 0) opts.seed_override = seed_override;

    salab::ExperimentResult result = salab::run_experiment(cfg, opts);
    for (const auto& stage : result.stages) {
      if (stage.ok) {
        std::printf("[ ok ] %-14s %8.0f ms\n", stage.name.c_str(), stage.wall_ms);
      } else {
        std::printf("[fail] %-14s %s\n", stage.name.c_str(), stage.error.c_str());
      }
    }
    for (const auto& w : result.warnings) std::printf("warning: %s\n", w.c_str());
    std::printf("outputs: %s\n", result.output_dir.c_str());
    return result.all_ok ? 0 : 1;
  } catch (const salab::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
