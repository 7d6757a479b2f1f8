#include "salab/problem.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

namespace salab {

namespace {

// Section-local typed getters.  These mirror the ParsedConfig accessors but
// operate on a single section, since the problem registry only ever sees the
// [problem] block.
std::string where(const std::string& source, const std::string& key, int line) {
  std::ostringstream os;
  os << source;
  if (line > 0) os << ":" << line;
  os << ": [problem] " << key;
  return os.str();
}

bool parse_double_token(const std::string& tok, double* out) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) return false;
  *out = v;
  return true;
}

struct SectionReader {
  const ConfigSection& section;
  const std::string& source;
  std::vector<std::string>* errors;
  std::set<std::string> consumed;

  const ConfigValue* find(const std::string& key) {
    auto it = section.find(key);
    if (it == section.end()) return nullptr;
    consumed.insert(key);
    return &it->second;
  }

  void fail(const std::string& key, int line, const std::string& detail) {
    errors->push_back(where(source, key, line) + ": " + detail);
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const ConfigValue* v = find(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(key, 0, "missing required key");
      return 0.0;
    }
    double out;
    if (!parse_double_token(v->raw, &out)) {
      fail(key, v->line, "expected a number, got '" + v->raw + "'");
      return 0.0;
    }
    return out;
  }

  long long integer(const std::string& key, std::optional<long long> fallback = std::nullopt) {
    const ConfigValue* v = find(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(key, 0, "missing required key");
      return 0;
    }
    errno = 0;
    char* end = nullptr;
    long long out = std::strtoll(v->raw.c_str(), &end, 10);
    if (end == v->raw.c_str() || *end != '\0' || errno == ERANGE) {
      fail(key, v->line, "expected an integer, got '" + v->raw + "'");
      return 0;
    }
    return out;
  }

  std::string word(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    const ConfigValue* v = find(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(key, 0, "missing required key");
      return {};
    }
    return v->raw;
  }

  std::vector<double> numbers(const std::string& key,
                              std::optional<std::vector<double>> fallback = std::nullopt) {
    const ConfigValue* v = find(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(key, 0, "missing required key");
      return {};
    }
    std::vector<double> out;
    std::istringstream in(v->raw);
    std::string tok;
    while (std::getline(in, tok, ',')) {
      size_t a = tok.find_first_not_of(" \t");
      size_t b = tok.find_last_not_of(" \t");
      tok = a == std::string::npos ? std::string() : tok.substr(a, b - a + 1);
      double x;
      if (tok.empty() || !parse_double_token(tok, &x)) {
        fail(key, v->line, "expected comma-separated numbers, got '" + v->raw + "'");
        return {};
      }
      out.push_back(x);
    }
    if (out.empty()) fail(key, v->line, "empty list");
    return out;
  }

  void reject_unconsumed(const std::string& kernel_name) {
    for (const auto& [key, value] : section) {
      if (!consumed.count(key)) {
        errors->push_back(where(source, key, value.line) + ": unknown key for kernel '" +
                          kernel_name + "'");
      }
    }
  }
};

NoiseSpec read_noise(SectionReader& r) {
  NoiseSpec spec;
  std::string kind = r.word("noise", std::string("none"));
  if (kind == "none") {
    spec.kind = NoiseKind::none;
  } else if (kind == "gaussian") {
    spec.kind = NoiseKind::gaussian;
  } else if (kind == "theta_scaled") {
    spec.kind = NoiseKind::theta_scaled;
  } else {
    const ConfigValue* v = nullptr;
    auto it = r.section.find("noise");
    if (it != r.section.end()) v = &it->second;
    r.fail("noise", v ? v->line : 0,
           "unknown noise kind '" + kind + "'; known: none, gaussian, theta_scaled");
  }
  spec.scale = r.number("noise_scale", spec.kind == NoiseKind::none ? 0.0 : 1.0);
  if (spec.kind != NoiseKind::none && !(spec.scale > 0.0)) {
    r.fail("noise_scale", 0, "must be > 0 when noise is enabled");
  }
  return spec;
}

Eigen::VectorXd read_theta0(SectionReader& r, int expected_dim) {
  std::vector<double> t0 = r.numbers("theta0", std::vector<double>(expected_dim, 0.0));
  if (static_cast<int>(t0.size()) != expected_dim) {
    r.fail("theta0", 0,
           "expected " + std::to_string(expected_dim) + " entries, got " +
               std::to_string(t0.size()));
    t0.assign(expected_dim, 0.0);
  }
  return Eigen::Map<const Eigen::VectorXd>(t0.data(), t0.size());
}

// The three registered map shapes share key names across kernels:
//   linear_hx:        g = -theta + <state contribution from h>
//   scalar_tanh_mix:  linear_hx with an extra -mix_coeff * tanh(theta - mix_center)
//   table:            finite kernels only, linear interpolation over theta_grid
FiniteMap read_finite_map(SectionReader& r, const std::string& map_name, int n_states) {
  if (map_name == "table") {
    std::vector<double> grid = r.numbers("theta_grid");
    std::vector<double> vals = r.numbers("values");
    if (!r.errors->empty()) return FiniteMap::linear_hx(Eigen::MatrixXd::Zero(n_states, 1));
    if (vals.size() != grid.size() * static_cast<size_t>(n_states)) {
      r.fail("values", 0,
             "expected n_grid * n_states = " + std::to_string(grid.size() * n_states) +
                 " entries, got " + std::to_string(vals.size()));
      return FiniteMap::linear_hx(Eigen::MatrixXd::Zero(n_states, 1));
    }
    Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(grid.data(), grid.size());
    Eigen::MatrixXd v(grid.size(), n_states);
    for (size_t i = 0; i < grid.size(); ++i)
      for (int x = 0; x < n_states; ++x) v(i, x) = vals[i * n_states + x];
    return FiniteMap::table(g, v);
  }

  std::vector<double> h = r.numbers("h");
  if (static_cast<int>(h.size()) != n_states) {
    r.fail("h", 0,
           "expected one entry per state (" + std::to_string(n_states) + "), got " +
               std::to_string(h.size()));
    h.assign(n_states, 0.0);
  }
  Eigen::MatrixXd h_table = Eigen::Map<const Eigen::VectorXd>(h.data(), h.size());
  if (map_name == "linear_hx") return FiniteMap::linear_hx(h_table);
  double mix_coeff = r.number("mix_coeff");
  double mix_center = r.number("mix_center", 0.0);
  return FiniteMap::tanh_mix(h_table.col(0), mix_coeff, mix_center);
}

}  // namespace

const std::vector<std::string>& known_kernels() {
  static const std::vector<std::string> names = {"finite2", "clipped_ar", "proj_langevin",
                                                 "rw_mh"};
  return names;
}

bool kernel_is_finite(const std::string& kernel_name) { return kernel_name == "finite2"; }

BuiltProblem build_problem(const ConfigSection& section, const std::string& source_name) {
  std::vector<std::string> errors;
  SectionReader r{section, source_name, &errors, {}};

  std::string kernel_name = r.word("kernel");
  if (!errors.empty()) throw ConfigError(std::move(errors));
  if (std::find(known_kernels().begin(), known_kernels().end(), kernel_name) ==
      known_kernels().end()) {
    std::string all;
    for (const auto& k : known_kernels()) {
      if (!all.empty()) all += ", ";
      all += k;
    }
    int line = section.count("kernel") ? section.at("kernel").line : 0;
    throw ConfigError(where(source_name, "kernel", line) + ": unknown kernel '" + kernel_name +
                      "'; built-ins: " + all);
  }

  auto check_map_name = [&](const std::string& name, std::initializer_list<const char*> allowed) {
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
      std::string all;
      for (const char* m : allowed) {
        if (!all.empty()) all += ", ";
        all += m;
      }
      int line = section.count("map") ? section.at("map").line : 0;
      errors.push_back(where(source_name, "map", line) + ": unknown map '" + name +
                       "' for kernel '" + kernel_name + "'; known: " + all);
    }
  };

  const bool finite = kernel_is_finite(kernel_name);

  if (kernel_name == "finite2") {
    Finite2Params p;
    p.a0 = r.number("a0", p.a0);
    p.a1 = r.number("a1", p.a1);
    p.b0 = r.number("b0", p.b0);
    p.b1 = r.number("b1", p.b1);
    p.theta_ref = r.number("theta_ref", p.theta_ref);
    std::string drive = r.word("drive", std::string("tanh"));
    if (drive == "tanh") {
      p.abs_drive = false;
    } else if (drive == "abs") {
      p.abs_drive = true;
    } else {
      r.fail("drive", section.count("drive") ? section.at("drive").line : 0,
             "unknown drive '" + drive + "'; known: tanh, abs");
    }
    if (!(p.a0 > 0.0 && p.a0 < 1.0)) r.fail("a0", 0, "base rate must lie in (0, 1)");
    if (!(p.b0 > 0.0 && p.b0 < 1.0)) r.fail("b0", 0, "base rate must lie in (0, 1)");

    std::string map_name = r.word("map", std::string("linear_hx"));
    check_map_name(map_name, {"linear_hx", "scalar_tanh_mix", "table"});
    FiniteMap map = errors.empty() ? read_finite_map(r, map_name, 2)
                                   : FiniteMap::linear_hx(Eigen::MatrixXd::Zero(2, 1));

    Eigen::VectorXd theta0 = read_theta0(r, map.dim());
    long long x0 = r.integer("x0", 0);
    if (x0 < 0 || x0 >= 2) r.fail("x0", 0, "state index must be 0 or 1");
    NoiseSpec noise = read_noise(r);
    r.reject_unconsumed(kernel_name);
    if (!errors.empty()) throw ConfigError(std::move(errors));

    int dim = map.dim();
    return BuiltProblem{FiniteProblem{FiniteKernel::finite2(p), std::move(map), noise,
                                      std::move(theta0), static_cast<int>(x0)},
                        kernel_name, map_name, finite, dim};
  }

  if (kernel_name == "clipped_ar") {
    double ar = r.number("ar_coeff", 0.5);
    double clip = r.number("clip", 10.0);
    double mean_coeff = r.number("mean_coeff", 1.0);
    double mean_offset = r.number("mean_offset", 0.0);
    double sigma = r.number("sigma", 1.0);
    if (!(std::abs(ar) < 1.0)) r.fail("ar_coeff", 0, "need |ar_coeff| < 1 for ergodicity");
    if (!(clip > 0.0)) r.fail("clip", 0, "must be > 0");
    if (!(sigma >= 0.0)) r.fail("sigma", 0, "must be >= 0");

    std::string map_name = r.word("map", std::string("linear_hx"));
    check_map_name(map_name, {"linear_hx", "scalar_tanh_mix"});
    std::vector<double> h = r.numbers("h", std::vector<double>{1.0});
    double mix_coeff = 0.0, mix_center = 0.0;
    if (map_name == "scalar_tanh_mix") {
      mix_coeff = r.number("mix_coeff");
      mix_center = r.number("mix_center", 0.0);
    }
    Eigen::VectorXd coeff = Eigen::Map<const Eigen::VectorXd>(h.data(), h.size());

    Eigen::VectorXd theta0 = read_theta0(r, static_cast<int>(coeff.size()));
    double x0 = r.number("x0", 0.0);
    if (errors.empty() && std::abs(x0) > clip) r.fail("x0", 0, "must lie within [-clip, clip]");
    NoiseSpec noise = read_noise(r);
    r.reject_unconsumed(kernel_name);
    if (!errors.empty()) throw ConfigError(std::move(errors));

    ClippedARKernel kernel(
        ar, [mean_coeff, mean_offset](const Eigen::VectorXd& t) {
          return mean_coeff * t[0] + mean_offset;
        },
        [sigma](const Eigen::VectorXd&) { return sigma; }, clip);
    int dim = static_cast<int>(coeff.size());
    return BuiltProblem{
        ClippedProblem{std::move(kernel), ScalarStateMap(std::move(coeff), mix_coeff, mix_center),
                       noise, std::move(theta0), x0},
        kernel_name, map_name, finite, dim};
  }

  if (kernel_name == "proj_langevin") {
    double eta = r.number("step_size", 0.05);
    long long m = r.integer("state_dim", 1);
    double lo = r.number("box_lo", -5.0);
    double hi = r.number("box_hi", 5.0);
    double b = r.number("coupling", 1.0);
    if (!(eta > 0.0)) r.fail("step_size", 0, "must be > 0");
    if (m < 1) r.fail("state_dim", 0, "must be >= 1");
    if (!(lo < hi)) r.fail("box_lo", 0, "need box_lo < box_hi");

    std::string map_name = r.word("map", std::string("linear_hx"));
    check_map_name(map_name, {"linear_hx"});
    std::vector<double> h =
        r.numbers("h", std::vector<double>(static_cast<size_t>(std::max<long long>(m, 1)),
                                           1.0 / std::max<double>(1.0, static_cast<double>(m))));
    if (errors.empty() && static_cast<long long>(h.size()) != m) {
      r.fail("h", 0,
             "expected state_dim = " + std::to_string(m) + " entries, got " +
                 std::to_string(h.size()));
    }

    std::vector<double> x0v =
        r.numbers("x0", std::vector<double>(static_cast<size_t>(std::max<long long>(m, 1)), 0.0));
    if (errors.empty() && static_cast<long long>(x0v.size()) != m) {
      r.fail("x0", 0,
             "expected state_dim = " + std::to_string(m) + " entries, got " +
                 std::to_string(x0v.size()));
    }
    Eigen::VectorXd theta0 = read_theta0(r, 1);
    NoiseSpec noise = read_noise(r);
    r.reject_unconsumed(kernel_name);
    if (!errors.empty()) throw ConfigError(std::move(errors));

    Eigen::MatrixXd H(1, m);
    for (long long i = 0; i < m; ++i) H(0, i) = h[i];
    Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(x0v.data(), x0v.size());
    x0 = x0.cwiseMax(lo).cwiseMin(hi);
    ProjectedLangevinKernel kernel(
        eta,
        [b](const Eigen::VectorXd& x, const Eigen::VectorXd& t, Eigen::VectorXd& grad) {
          grad = x;
          grad.array() -= b * t[0];
        },
        Eigen::VectorXd::Constant(m, lo), Eigen::VectorXd::Constant(m, hi));
    return BuiltProblem{LangevinProblem{std::move(kernel), VectorStateMap(std::move(H)), noise,
                                        std::move(theta0), std::move(x0)},
                        kernel_name, map_name, finite, 1};
  }

  // rw_mh: Metropolis-Hastings over a Gaussian target whose location tracks
  // loc_coeff * theta.
  double sigma_q = r.number("proposal_sigma", 1.0);
  double loc_coeff = r.number("loc_coeff", 1.0);
  double target_var = r.number("target_var", 1.0);
  if (!(sigma_q > 0.0)) r.fail("proposal_sigma", 0, "must be > 0");
  if (!(target_var > 0.0)) r.fail("target_var", 0, "must be > 0");

  std::string map_name = r.word("map", std::string("linear_hx"));
  check_map_name(map_name, {"linear_hx", "scalar_tanh_mix"});
  std::vector<double> h = r.numbers("h", std::vector<double>{1.0});
  double mix_coeff = 0.0, mix_center = 0.0;
  if (map_name == "scalar_tanh_mix") {
    mix_coeff = r.number("mix_coeff");
    mix_center = r.number("mix_center", 0.0);
  }
  Eigen::VectorXd coeff = Eigen::Map<const Eigen::VectorXd>(h.data(), h.size());

  Eigen::VectorXd theta0 = read_theta0(r, static_cast<int>(coeff.size()));
  double x0 = r.number("x0", 0.0);
  NoiseSpec noise = read_noise(r);
  r.reject_unconsumed(kernel_name);
  if (!errors.empty()) throw ConfigError(std::move(errors));

  MHKernel kernel(
      [loc_coeff, target_var](double x, const Eigen::VectorXd& t) {
        double c = x - loc_coeff * t[0];
        return c * c / (2.0 * target_var);
      },
      sigma_q);
  int dim = static_cast<int>(coeff.size());
  return BuiltProblem{
      MHProblem{std::move(kernel), ScalarStateMap(std::move(coeff), mix_coeff, mix_center), noise,
                std::move(theta0), x0},
      kernel_name, map_name, finite, dim};
}

}  // namespace salab
