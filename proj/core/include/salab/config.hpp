#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace salab {

// Raised for malformed or inconsistent experiment configs.  `messages` holds
// one line-prefixed entry per problem found, so a single validate pass can
// report everything at once.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> messages)
      : std::runtime_error(join(messages)), messages_(std::move(messages)) {}
  explicit ConfigError(std::string message)
      : ConfigError(std::vector<std::string>{std::move(message)}) {}

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  static std::string join(const std::vector<std::string>& msgs) {
    std::string out;
    for (const auto& m : msgs) {
      if (!out.empty()) out += '\n';
      out += m;
    }
    return out;
  }
  std::vector<std::string> messages_;
};

// One parsed "key = value" entry with its source line for diagnostics.
struct ConfigValue {
  std::string raw;
  int line = 0;
};

using ConfigSection = std::map<std::string, ConfigValue>;

// Sectioned flat key-value text:  [section] headers, "key = value" lines,
// '#' comments.  Unknown structure (stray text, duplicate keys) is rejected
// with the offending line number.
struct ParsedConfig {
  std::map<std::string, ConfigSection> sections;
  std::map<std::string, int> section_lines;
  std::string source_name;
  std::string source_text;

  bool has(const std::string& section) const { return sections.count(section) > 0; }
};

ParsedConfig parse_config_text(const std::string& text, const std::string& source_name);

// Typed accessors; every failure carries "<source>:<line>: [section] key: ...".
double get_double(const ParsedConfig& cfg, const std::string& section, const std::string& key,
                  std::optional<double> fallback = std::nullopt);
long long get_int(const ParsedConfig& cfg, const std::string& section, const std::string& key,
                  std::optional<long long> fallback = std::nullopt);
std::uint64_t get_uint64(const ParsedConfig& cfg, const std::string& section,
                         const std::string& key,
                         std::optional<std::uint64_t> fallback = std::nullopt);
std::string get_string(const ParsedConfig& cfg, const std::string& section,
                       const std::string& key,
                       std::optional<std::string> fallback = std::nullopt);
std::vector<double> get_double_list(const ParsedConfig& cfg, const std::string& section,
                                    const std::string& key,
                                    std::optional<std::vector<double>> fallback = std::nullopt);
std::vector<std::string> get_string_list(const ParsedConfig& cfg, const std::string& section,
                                         const std::string& key);

// ---------------------------------------------------------------------------
// Experiment description.
// ---------------------------------------------------------------------------

struct CltSettings {
  double alpha = 0.02;
  int replicas = 500;
  long long steps = 100000;
  int max_lag = 400;
  long long sigma_steps = 1000000;
  double nominal = 0.95;
};

struct CouplingSettings {
  double alpha = 0.02;
  int pairs = 100;
  long long steps = 400;
  double theta_offset = 1.0;
};

struct WdScanSettings {
  double radius_max = 0.1;
  double radius_min = 1e-4;
  int points_per_decade = 3;
  int random_directions = 8;
};

struct DecompositionSettings {
  double alpha = 0.01;
  int replicas = 16;
  long long samples_per_replica = 256;
};

struct ExperimentConfig {
  ConfigSection problem;  // interpreted by the problem registry
  std::vector<double> alphas;
  long long steps_per_unit_alpha = 0;
  int replicas = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> analyses;
  std::string output_dir;
  double burn_in_safety = 46.051701859880913680;  // 20 ln 10
  long long burn_in_override = 0;                 // 0: derive from tau(alpha)
  CltSettings clt;
  CouplingSettings coupling;
  WdScanSettings wd_scan;
  DecompositionSettings decomposition;
  std::string source_name;
  std::string source_text;
};

// All known analysis names, in canonical output order.
const std::vector<std::string>& known_analyses();

// Parse + semantic validation.  Throws ConfigError listing every problem.
ExperimentConfig validate_config(const ParsedConfig& parsed);
ExperimentConfig load_config_file(const std::string& path);

}  // namespace salab
