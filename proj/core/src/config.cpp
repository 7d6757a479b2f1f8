#include "salab/config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "salab/problem.hpp"

namespace salab {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0;
  size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string where(const ParsedConfig& cfg, const std::string& section, const std::string& key,
                  int line) {
  std::ostringstream os;
  os << cfg.source_name;
  if (line > 0) os << ":" << line;
  os << ": [" << section << "] " << key;
  return os.str();
}

const ConfigValue* lookup(const ParsedConfig& cfg, const std::string& section,
                          const std::string& key) {
  auto sec = cfg.sections.find(section);
  if (sec == cfg.sections.end()) return nullptr;
  auto it = sec->second.find(key);
  return it == sec->second.end() ? nullptr : &it->second;
}

bool parse_double_token(const std::string& tok, double* out) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) return false;
  *out = v;
  return true;
}

}  // namespace

ParsedConfig parse_config_text(const std::string& text, const std::string& source_name) {
  ParsedConfig cfg;
  cfg.source_name = source_name;
  cfg.source_text = text;

  std::vector<std::string> errors;
  std::istringstream in(text);
  std::string line;
  std::string current;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back(source_name + ":" + std::to_string(lineno) +
                         ": unterminated section header");
        continue;
      }
      current = trim(line.substr(1, line.size() - 2));
      if (current.empty()) {
        errors.push_back(source_name + ":" + std::to_string(lineno) + ": empty section name");
        continue;
      }
      if (cfg.sections.count(current)) {
        errors.push_back(source_name + ":" + std::to_string(lineno) + ": duplicate section [" +
                         current + "] (first at line " +
                         std::to_string(cfg.section_lines[current]) + ")");
      } else {
        cfg.sections[current];
        cfg.section_lines[current] = lineno;
      }
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(source_name + ":" + std::to_string(lineno) +
                       ": expected 'key = value' or '[section]'");
      continue;
    }
    if (current.empty()) {
      errors.push_back(source_name + ":" + std::to_string(lineno) +
                       ": key outside of any section");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      errors.push_back(source_name + ":" + std::to_string(lineno) + ": empty key");
      continue;
    }
    if (value.empty()) {
      errors.push_back(source_name + ":" + std::to_string(lineno) + ": empty value for '" + key +
                       "'");
      continue;
    }
    auto& sec = cfg.sections[current];
    if (sec.count(key)) {
      errors.push_back(source_name + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                       "' in [" + current + "] (first at line " + std::to_string(sec[key].line) +
                       ")");
      continue;
    }
    sec[key] = ConfigValue{value, lineno};
  }

  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

double get_double(const ParsedConfig& cfg, const std::string& section, const std::string& key,
                  std::optional<double> fallback) {
  const ConfigValue* v = lookup(cfg, section, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(where(cfg, section, key, 0) + ": missing required key");
  }
  double out;
  if (!parse_double_token(v->raw, &out)) {
    throw ConfigError(where(cfg, section, key, v->line) + ": expected a number, got '" + v->raw +
                      "'");
  }
  return out;
}

long long get_int(const ParsedConfig& cfg, const std::string& section, const std::string& key,
                  std::optional<long long> fallback) {
  const ConfigValue* v = lookup(cfg, section, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(where(cfg, section, key, 0) + ": missing required key");
  }
  errno = 0;
  char* end = nullptr;
  long long out = std::strtoll(v->raw.c_str(), &end, 10);
  if (end == v->raw.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError(where(cfg, section, key, v->line) + ": expected an integer, got '" + v->raw +
                      "'");
  }
  return out;
}

std::uint64_t get_uint64(const ParsedConfig& cfg, const std::string& section,
                         const std::string& key, std::optional<std::uint64_t> fallback) {
  const ConfigValue* v = lookup(cfg, section, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(where(cfg, section, key, 0) + ": missing required key");
  }
  const std::string& raw = v->raw;
  errno = 0;
  char* end = nullptr;
  unsigned long long out = std::strtoull(raw.c_str(), &end, 10);
  if (raw.empty() || raw[0] == '-' || end == raw.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError(where(cfg, section, key, v->line) +
                      ": expected a non-negative integer, got '" + raw + "'");
  }
  return static_cast<std::uint64_t>(out);
}

std::string get_string(const ParsedConfig& cfg, const std::string& section, const std::string& key,
                       std::optional<std::string> fallback) {
  const ConfigValue* v = lookup(cfg, section, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(where(cfg, section, key, 0) + ": missing required key");
  }
  return v->raw;
}

std::vector<double> get_double_list(const ParsedConfig& cfg, const std::string& section,
                                    const std::string& key,
                                    std::optional<std::vector<double>> fallback) {
  const ConfigValue* v = lookup(cfg, section, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(where(cfg, section, key, 0) + ": missing required key");
  }
  std::vector<double> out;
  std::istringstream in(v->raw);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    double x;
    if (tok.empty() || !parse_double_token(tok, &x)) {
      throw ConfigError(where(cfg, section, key, v->line) +
                        ": expected comma-separated numbers, got '" + v->raw + "'");
    }
    out.push_back(x);
  }
  if (out.empty()) {
    throw ConfigError(where(cfg, section, key, v->line) + ": empty list");
  }
  return out;
}

std::vector<std::string> get_string_list(const ParsedConfig& cfg, const std::string& section,
                                         const std::string& key) {
  const ConfigValue* v = lookup(cfg, section, key);
  if (!v) {
    throw ConfigError(where(cfg, section, key, 0) + ": missing required key");
  }
  std::vector<std::string> out;
  std::istringstream in(v->raw);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) {
      throw ConfigError(where(cfg, section, key, v->line) + ": empty entry in list '" + v->raw +
                        "'");
    }
    out.push_back(tok);
  }
  if (out.empty()) {
    throw ConfigError(where(cfg, section, key, v->line) + ": empty list");
  }
  return out;
}

const std::vector<std::string>& known_analyses() {
  static const std::vector<std::string> names = {"bias",     "moments", "rr",           "clt",
                                                 "coupling", "wd_scan", "decomposition"};
  return names;
}

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

// Unknown keys in schema-owned sections are almost always typos; reject them
// with the line they appear on.
void check_known_keys(const ParsedConfig& cfg, const std::string& section,
                      const std::set<std::string>& known, std::vector<std::string>* errors) {
  auto it = cfg.sections.find(section);
  if (it == cfg.sections.end()) return;
  for (const auto& [key, value] : it->second) {
    if (!known.count(key)) {
      errors->push_back(where(cfg, section, key, value.line) + ": unknown key");
    }
  }
}

template <typename Fn>
void collect(std::vector<std::string>* errors, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    for (const auto& m : e.messages()) errors->push_back(m);
  }
}

}  // namespace

ExperimentConfig validate_config(const ParsedConfig& parsed) {
  std::vector<std::string> errors;
  ExperimentConfig cfg;
  cfg.source_name = parsed.source_name;
  cfg.source_text = parsed.source_text;

  static const std::set<std::string> known_sections = {
      "problem", "sweep", "run", "clt", "coupling", "wd_scan", "decomposition"};
  for (const auto& [name, line] : parsed.section_lines) {
    if (!known_sections.count(name)) {
      errors.push_back(parsed.source_name + ":" + std::to_string(line) + ": unknown section [" +
                       name + "]");
    }
  }

  if (!parsed.has("problem")) {
    errors.push_back(parsed.source_name + ": missing [problem] section");
  } else {
    cfg.problem = parsed.sections.at("problem");
  }
  if (!parsed.has("sweep")) {
    errors.push_back(parsed.source_name + ": missing [sweep] section");
  }
  if (!parsed.has("run")) {
    errors.push_back(parsed.source_name + ": missing [run] section");
  }

  check_known_keys(parsed, "sweep",
                   {"alphas", "steps_per_unit_alpha", "replicas", "seed", "burn_in_safety",
                    "burn_in"},
                   &errors);
  check_known_keys(parsed, "run", {"analyses", "output_dir"}, &errors);
  check_known_keys(parsed, "clt", {"alpha", "replicas", "steps", "max_lag", "sigma_steps",
                                   "nominal"},
                   &errors);
  check_known_keys(parsed, "coupling", {"alpha", "pairs", "steps", "theta_offset"}, &errors);
  check_known_keys(parsed, "wd_scan",
                   {"radius_max", "radius_min", "points_per_decade", "random_directions"},
                   &errors);
  check_known_keys(parsed, "decomposition", {"alpha", "replicas", "samples_per_replica"},
                   &errors);

  if (parsed.has("sweep")) {
    collect(&errors, [&] { cfg.alphas = get_double_list(parsed, "sweep", "alphas"); });
    collect(&errors,
            [&] { cfg.steps_per_unit_alpha = get_int(parsed, "sweep", "steps_per_unit_alpha"); });
    collect(&errors,
            [&] { cfg.replicas = static_cast<int>(get_int(parsed, "sweep", "replicas")); });
    collect(&errors, [&] { cfg.seed = get_uint64(parsed, "sweep", "seed"); });
    collect(&errors, [&] {
      cfg.burn_in_safety = get_double(parsed, "sweep", "burn_in_safety", cfg.burn_in_safety);
    });
    collect(&errors, [&] { cfg.burn_in_override = get_int(parsed, "sweep", "burn_in", 0); });
  }
  if (parsed.has("run")) {
    collect(&errors, [&] { cfg.analyses = get_string_list(parsed, "run", "analyses"); });
    collect(&errors, [&] { cfg.output_dir = get_string(parsed, "run", "output_dir"); });
  }

  collect(&errors, [&] { cfg.clt.alpha = get_double(parsed, "clt", "alpha", cfg.clt.alpha); });
  collect(&errors, [&] {
    cfg.clt.replicas = static_cast<int>(get_int(parsed, "clt", "replicas", cfg.clt.replicas));
  });
  collect(&errors, [&] { cfg.clt.steps = get_int(parsed, "clt", "steps", cfg.clt.steps); });
  collect(&errors, [&] {
    cfg.clt.max_lag = static_cast<int>(get_int(parsed, "clt", "max_lag", cfg.clt.max_lag));
  });
  collect(&errors, [&] {
    cfg.clt.sigma_steps = get_int(parsed, "clt", "sigma_steps", cfg.clt.sigma_steps);
  });
  collect(&errors,
          [&] { cfg.clt.nominal = get_double(parsed, "clt", "nominal", cfg.clt.nominal); });

  collect(&errors,
          [&] { cfg.coupling.alpha = get_double(parsed, "coupling", "alpha", cfg.coupling.alpha); });
  collect(&errors, [&] {
    cfg.coupling.pairs = static_cast<int>(get_int(parsed, "coupling", "pairs", cfg.coupling.pairs));
  });
  collect(&errors,
          [&] { cfg.coupling.steps = get_int(parsed, "coupling", "steps", cfg.coupling.steps); });
  collect(&errors, [&] {
    cfg.coupling.theta_offset =
        get_double(parsed, "coupling", "theta_offset", cfg.coupling.theta_offset);
  });

  collect(&errors, [&] {
    cfg.wd_scan.radius_max = get_double(parsed, "wd_scan", "radius_max", cfg.wd_scan.radius_max);
  });
  collect(&errors, [&] {
    cfg.wd_scan.radius_min = get_double(parsed, "wd_scan", "radius_min", cfg.wd_scan.radius_min);
  });
  collect(&errors, [&] {
    cfg.wd_scan.points_per_decade = static_cast<int>(
        get_int(parsed, "wd_scan", "points_per_decade", cfg.wd_scan.points_per_decade));
  });
  collect(&errors, [&] {
    cfg.wd_scan.random_directions = static_cast<int>(
        get_int(parsed, "wd_scan", "random_directions", cfg.wd_scan.random_directions));
  });

  collect(&errors, [&] {
    cfg.decomposition.alpha = get_double(parsed, "decomposition", "alpha", cfg.decomposition.alpha);
  });
  collect(&errors, [&] {
    cfg.decomposition.replicas = static_cast<int>(
        get_int(parsed, "decomposition", "replicas", cfg.decomposition.replicas));
  });
  collect(&errors, [&] {
    cfg.decomposition.samples_per_replica = get_int(parsed, "decomposition", "samples_per_replica",
                                                    cfg.decomposition.samples_per_replica);
  });

  // Semantic checks only make sense once the fields themselves parsed.
  if (errors.empty()) {
    auto semantic = [&](const std::string& msg) {
      errors.push_back(parsed.source_name + ": " + msg);
    };

    for (double a : cfg.alphas) {
      if (!(a > 0.0 && a <= 1.0)) {
        semantic("[sweep] alphas: every stepsize must lie in (0, 1], got " + std::to_string(a));
        break;
      }
    }
    for (size_t i = 1; i < cfg.alphas.size(); ++i) {
      if (!(cfg.alphas[i] < cfg.alphas[i - 1])) {
        semantic("[sweep] alphas: must be strictly decreasing");
        break;
      }
    }
    if (cfg.steps_per_unit_alpha < 1) semantic("[sweep] steps_per_unit_alpha: must be >= 1");
    if (cfg.replicas < 1) semantic("[sweep] replicas: must be >= 1");
    if (cfg.burn_in_override < 0) semantic("[sweep] burn_in: must be >= 0");
    if (!(cfg.burn_in_safety > 0.0)) semantic("[sweep] burn_in_safety: must be > 0");

    std::set<std::string> seen;
    for (const auto& a : cfg.analyses) {
      if (!contains(known_analyses(), a)) {
        std::string all;
        for (const auto& k : known_analyses()) {
          if (!all.empty()) all += ", ";
          all += k;
        }
        semantic("[run] analyses: unknown analysis '" + a + "'; known: " + all);
      }
      if (!seen.insert(a).second) {
        semantic("[run] analyses: duplicate entry '" + a + "'");
      }
    }
    if (cfg.output_dir.empty()) semantic("[run] output_dir: must not be empty");

    const bool wants_bias = contains(cfg.analyses, "bias");
    const bool wants_rr = contains(cfg.analyses, "rr");
    if (wants_bias && cfg.replicas < 2) {
      semantic("[sweep] replicas: analysis 'bias' requires replicas >= 2 to estimate a standard "
               "error");
    }
    if (contains(cfg.analyses, "moments") && cfg.replicas < 2) {
      semantic("[sweep] replicas: analysis 'moments' requires replicas >= 2 to estimate a "
               "standard error");
    }
    if (wants_rr) {
      if (cfg.replicas < 2) {
        semantic("[sweep] replicas: analysis 'rr' requires replicas >= 2 to estimate a standard "
                 "error");
      }
      bool have_pair = false;
      for (double a : cfg.alphas) {
        for (double b : cfg.alphas) {
          if (std::abs(b - 2.0 * a) <= 1e-9 * a) have_pair = true;
        }
      }
      if (!have_pair && !cfg.alphas.empty()) {
        semantic("[run] analyses: 'rr' needs at least one stepsize pair (alpha, 2*alpha) in "
                 "[sweep] alphas");
      }
    }

    if (contains(cfg.analyses, "clt")) {
      if (!(cfg.clt.alpha > 0.0 && cfg.clt.alpha <= 1.0)) semantic("[clt] alpha: must lie in (0, 1]");
      if (cfg.clt.replicas < 200)
        semantic("[clt] replicas: coverage needs at least 200 replicas");
      if (cfg.clt.steps < 1) semantic("[clt] steps: must be >= 1");
      if (cfg.clt.max_lag < 1) semantic("[clt] max_lag: must be >= 1");
      if (cfg.clt.sigma_steps < 50LL * cfg.clt.max_lag)
        semantic("[clt] sigma_steps: need at least 50 * max_lag post-burn-in samples");
      if (!(cfg.clt.nominal > 0.0 && cfg.clt.nominal < 1.0))
        semantic("[clt] nominal: must lie in (0, 1)");
    }
    if (contains(cfg.analyses, "coupling")) {
      if (!(cfg.coupling.alpha > 0.0 && cfg.coupling.alpha <= 1.0))
        semantic("[coupling] alpha: must lie in (0, 1]");
      if (cfg.coupling.pairs < 1) semantic("[coupling] pairs: must be >= 1");
      if (cfg.coupling.steps < 3) semantic("[coupling] steps: must be >= 3");
    }
    if (contains(cfg.analyses, "wd_scan")) {
      if (!(cfg.wd_scan.radius_min > 0.0 && cfg.wd_scan.radius_min < cfg.wd_scan.radius_max))
        semantic("[wd_scan] radii: need 0 < radius_min < radius_max");
      if (cfg.wd_scan.points_per_decade < 1)
        semantic("[wd_scan] points_per_decade: must be >= 1");
      if (cfg.wd_scan.random_directions < 0)
        semantic("[wd_scan] random_directions: must be >= 0");
    }
    if (contains(cfg.analyses, "decomposition")) {
      if (!(cfg.decomposition.alpha > 0.0 && cfg.decomposition.alpha <= 1.0))
        semantic("[decomposition] alpha: must lie in (0, 1]");
      if (cfg.decomposition.replicas < 2)
        semantic("[decomposition] replicas: must be >= 2 to estimate standard errors");
      if (cfg.decomposition.samples_per_replica < 2)
        semantic("[decomposition] samples_per_replica: must be >= 2");
    }

    // Kernel-level checks, including the exact-representation requirement of
    // the operator analyses.
    if (!cfg.problem.empty() || parsed.has("problem")) {
      auto kit = cfg.problem.find("kernel");
      if (kit == cfg.problem.end()) {
        semantic("[problem] kernel: missing required key");
      } else {
        const std::string& kernel = kit->second.raw;
        if (!contains(known_kernels(), kernel)) {
          std::string all;
          for (const auto& k : known_kernels()) {
            if (!all.empty()) all += ", ";
            all += k;
          }
          errors.push_back(where(parsed, "problem", "kernel", kit->second.line) +
                           ": unknown kernel '" + kernel + "'; built-ins: " + all);
        } else if (!kernel_is_finite(kernel)) {
          for (const char* name : {"wd_scan", "decomposition"}) {
            if (contains(cfg.analyses, name)) {
              semantic(std::string("[run] analyses: '") + name +
                       "' needs a finite-state kernel (exact transition rows); kernel '" + kernel +
                       "' is continuous");
            }
          }
        }
      }
    }

    // Parameter-level problem validation; surfaces bad shapes and ranges at
    // validate time instead of run time.
    if (errors.empty()) {
      collect(&errors, [&] { build_problem(cfg.problem, parsed.source_name); });
    }
  }

  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return validate_config(parse_config_text(buf.str(), path));
}

}  // namespace salab
