#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "salab/config.hpp"

namespace salab {

struct RunOptions {
  std::string output_dir_override;  // empty: use the config's output_dir
  int threads = 0;                  // 0: hardware concurrency
  std::optional<std::uint64_t> seed_override;
};

struct StageOutcome {
  std::string name;
  bool ok = false;
  std::string error;                 // set when !ok
  double wall_ms = 0.0;
  std::vector<std::string> outputs;  // files written, relative to output_dir
};

struct ExperimentResult {
  std::vector<StageOutcome> stages;
  std::vector<std::string> warnings;
  std::string output_dir;
  bool all_ok = true;
};

// Runs every requested analysis, writing CSV/JSON artifacts plus
// manifest.json into the output directory.  Analysis failures are recorded
// per stage rather than aborting the whole run; configuration problems throw
// ConfigError before anything is written.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// A manifest embeds the full config text and the effective seed, so a run can
// be reproduced from its manifest alone.
ExperimentConfig config_from_manifest(const std::string& manifest_path);

// True when the file looks like a manifest rather than a config (first
// non-whitespace byte is '{').
bool looks_like_manifest(const std::string& path);

}  // namespace salab
