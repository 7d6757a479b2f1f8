#include "salab/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <thread>
#include <variant>

#include "salab/estimators.hpp"
#include "salab/gateaux.hpp"
#include "salab/mean_field.hpp"
#include "salab/poisson.hpp"
#include "salab/problem.hpp"
#include "salab/sa_engine.hpp"
#include "salab/svg_plot.hpp"

namespace salab {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// JSON cannot carry inf/nan; those become null.
ordered_json num_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

ordered_json to_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num_or_null(v[i]));
  return a;
}

ordered_json to_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(num_or_null(m(i, j)));
    rows.push_back(row);
  }
  return rows;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Norm of a vector estimate with a per-component standard error, collapsed to
// a scalar by the delta method; falls back to the SE norm at zero.
double norm_std_error(const Eigen::VectorXd& value, const Eigen::VectorXd& se) {
  double n = value.norm();
  if (n <= 0) return se.norm();
  double acc = 0;
  for (Eigen::Index i = 0; i < value.size(); ++i) {
    double t = value[i] * se[i];
    acc += t * t;
  }
  return std::sqrt(acc) / n;
}

std::vector<double> fit_line_points(double slope, double intercept, double lo, double hi) {
  return {std::exp(intercept + slope * std::log(lo)), std::exp(intercept + slope * std::log(hi))};
}

bool wants(const ExperimentConfig& cfg, const char* name) {
  return std::find(cfg.analyses.begin(), cfg.analyses.end(), name) != cfg.analyses.end();
}

// Damped fixed-point root search on a Monte Carlo mean field.  Common random
// numbers (the fixed eval seed) make the objective deterministic in theta.
template <class Kernel, class Map>
RootCertificate mc_root(const Problem<Kernel, Map>& pb, std::uint64_t seed) {
  const long long budget = 200000, burn = 2000;
  auto eval = [&](const Eigen::VectorXd& t) {
    return mean_field_eval_mc(pb.kernel, pb.map, t, budget, burn, seed);
  };

  Eigen::VectorXd theta = pb.theta0;
  MeanFieldValue mf = eval(theta);
  double eta = 0.5;
  for (int it = 0; it < 200; ++it) {
    double tol = std::max(1e-3, 3.0 * mf.std_error);
    if (mf.value.norm() <= tol) break;
    Eigen::VectorXd cand = theta + eta * mf.value;
    MeanFieldValue next = eval(cand);
    if (next.value.norm() < mf.value.norm()) {
      theta = cand;
      mf = next;
    } else {
      eta *= 0.5;
      if (eta < 1e-4) break;
    }
  }

  RootCertificate cert;
  cert.theta_star = theta;
  cert.residual = mf.value.norm();
  cert.method = RootMethod::monte_carlo;
  const int d = static_cast<int>(theta.size());
  const double h = 0.05 * (1.0 + theta.norm());
  cert.jacobian.resize(d, d);
  Eigen::VectorXd probe = theta;
  for (int j = 0; j < d; ++j) {
    probe[j] = theta[j] + h;
    Eigen::VectorXd plus = eval(probe).value;
    probe[j] = theta[j] - h;
    Eigen::VectorXd minus = eval(probe).value;
    probe[j] = theta[j];
    cert.jacobian.col(j) = (plus - minus) / (2.0 * h);
  }
  cert.jacobian_error = mf.std_error / h;
  return cert;
}

// Gradient estimates of a Monte Carlo mean field over a 1d probe line, giving
// rough strong-monotonicity and Lipschitz constants for continuous kernels.
template <class Kernel, class Map>
MonotonicityScan mc_monotonicity(const Problem<Kernel, Map>& pb, const Eigen::VectorXd& center,
                                 std::uint64_t seed) {
  const int n_points = 9;
  const long long budget = 100000, burn = 1000;
  std::vector<Eigen::VectorXd> thetas, values;
  for (int i = 0; i < n_points; ++i) {
    Eigen::VectorXd t = center;
    t[0] += -1.0 + 2.0 * i / (n_points - 1);
    thetas.push_back(t);
    values.push_back(mean_field_eval_mc(pb.kernel, pb.map, t, budget, burn, seed).value);
  }
  MonotonicityScan scan;
  scan.n_points = n_points;
  scan.mu_hat = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_points; ++i) {
    for (int j = i + 1; j < n_points; ++j) {
      Eigen::VectorXd dt = thetas[i] - thetas[j];
      Eigen::VectorXd dg = values[i] - values[j];
      double dt2 = dt.squaredNorm();
      if (dt2 <= 0) continue;
      scan.mu_hat = std::min(scan.mu_hat, -dt.dot(dg) / dt2);
      scan.l1_hat = std::max(scan.l1_hat, dg.norm() / std::sqrt(dt2));
    }
  }
  return scan;
}

struct AlphaSchedule {
  double alpha = 0.0;
  double tau = 0.0;
  long long burn_in = 0;
  long long post_burn = 0;  // zero when the stepsize is not part of the sweep
};

class Csv {
 public:
  explicit Csv(const std::vector<std::string>& columns) {
    for (size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << ',';
      out_ << columns[i];
    }
    out_ << '\n';
  }
  void row(const std::vector<double>& values) {
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ',';
      out_ << fmt17(values[i]);
    }
    out_ << '\n';
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Pipeline.
// ---------------------------------------------------------------------------

namespace {

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, const RunOptions& opts)
      : cfg_(cfg),
        built_(build_problem(cfg.problem, cfg.source_name)),
        seed_(opts.seed_override ? *opts.seed_override : cfg.seed),
        threads_(opts.threads > 0
                     ? opts.threads
                     : std::max(1u, std::thread::hardware_concurrency())),
        out_dir_(opts.output_dir_override.empty() ? cfg.output_dir : opts.output_dir_override) {}

  ExperimentResult run();

 private:
  template <class Fn>
  void stage(const std::string& name, Fn&& body);

  void stage_root();
  void stage_diagnostics();
  void stage_sweep();
  void stage_clt();
  void stage_coupling();
  void stage_wd_scan();
  void stage_decomposition();
  void write_manifest();

  void warn(const std::string& msg) { warnings_.push_back(msg); }

  // Writes a stage artifact and records it in the current stage outcome.
  void emit(const std::string& relpath, const std::string& content) {
    fs::path p = fs::path(out_dir_) / relpath;
    write_text(p, content);
    current_outputs_->push_back(relpath);
  }

  AlphaSchedule schedule(double alpha, long long post_burn) const {
    AlphaSchedule s;
    s.alpha = alpha;
    s.tau = tau_rate(alpha, mu_eff_, rho_eff_);
    s.burn_in = cfg_.burn_in_override > 0
                    ? cfg_.burn_in_override
                    : default_burn_in(alpha, mu_eff_, rho_eff_, cfg_.burn_in_safety);
    s.post_burn = post_burn;
    return s;
  }

  long long sweep_post_burn(double alpha) const {
    return static_cast<long long>(
        std::ceil(static_cast<double>(cfg_.steps_per_unit_alpha) / alpha));
  }

  // Exact chain operators at theta_star, shared by wd_scan and decomposition.
  void ensure_operators();

  const ExperimentConfig& cfg_;
  BuiltProblem built_;
  std::uint64_t seed_;
  int threads_;
  std::string out_dir_;

  ExperimentResult result_;
  std::vector<std::string> warnings_;
  std::vector<std::string>* current_outputs_ = nullptr;

  bool prereq_ok_ = false;
  std::string prereq_error_;

  RootCertificate root_;
  double rho_hat_ = 0.0, rho_ci_ = 0.0, lp_hat_ = 0.0;
  double mu_hat_ = 0.0, l1_hat_ = 0.0;
  double mu_eff_ = 0.0, rho_eff_ = 0.0;
  double sensitivity_threshold_ = 0.0;
  bool sensitivity_ok_ = false;

  bool operators_ready_ = false;
  Eigen::MatrixXd p_star_;
  Eigen::VectorXd pi_star_;
  PoissonSolution poisson_;
  std::unique_ptr<GateauxOperator> gateaux_;

  ordered_json stream_seeds_ = ordered_json::object();
  ordered_json analysis_summary_ = ordered_json::object();
  std::vector<AlphaSchedule> sweep_schedule_;
};

template <class Fn>
void Pipeline::stage(const std::string& name, Fn&& body) {
  StageOutcome outcome;
  outcome.name = name;
  current_outputs_ = &outcome.outputs;
  auto start = std::chrono::steady_clock::now();
  if (!prereq_ok_ && name != "root") {
    outcome.ok = false;
    outcome.error = "skipped: " + prereq_error_;
  } else {
    try {
      body();
      outcome.ok = true;
    } catch (const std::exception& e) {
      outcome.ok = false;
      outcome.error = e.what();
    }
  }
  outcome.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (!outcome.ok) result_.all_ok = false;
  result_.stages.push_back(std::move(outcome));
  current_outputs_ = nullptr;
}

void Pipeline::stage_root() {
  if (auto* fp = std::get_if<FiniteProblem>(&built_.problem)) {
    root_ = find_root(fp->kernel, fp->map, fp->theta0);
  } else {
    root_ = std::visit(
        [&](const auto& pb) -> RootCertificate {
          using P = std::decay_t<decltype(pb)>;
          if constexpr (std::is_same_v<P, FiniteProblem>) {
            throw std::logic_error("unreachable");
          } else {
            return mc_root(pb, RngStream::derive(seed_, 0x726f6f74u));
          }
        },
        built_.problem);
  }
  prereq_ok_ = true;
}

void Pipeline::stage_diagnostics() {
  const Eigen::VectorXd& ts = root_.theta_star;

  KernelDiagnostics contraction = std::visit(
      [&](const auto& pb) {
        return estimate_contraction(pb.kernel, ts, 128, 64, RngStream::derive(seed_, 0xd1u));
      },
      built_.problem);
  rho_hat_ = contraction.rho_hat;
  rho_ci_ = contraction.ci_width;

  Eigen::VectorXd probe = ts;
  probe[0] += 0.05 * (1.0 + ts.norm());
  KernelDiagnostics sensitivity = std::visit(
      [&](const auto& pb) {
        return estimate_sensitivity(pb.kernel, ts, probe, 128, 64,
                                    RngStream::derive(seed_, 0xd2u));
      },
      built_.problem);
  lp_hat_ = sensitivity.lp_hat;

  MonotonicityScan scan;
  if (auto* fp = std::get_if<FiniteProblem>(&built_.problem)) {
    scan = monotonicity_scan(fp->kernel, fp->map, ts[0] - 2.0, ts[0] + 2.0, 41);
  } else {
    scan = std::visit(
        [&](const auto& pb) -> MonotonicityScan {
          using P = std::decay_t<decltype(pb)>;
          if constexpr (std::is_same_v<P, FiniteProblem>) {
            throw std::logic_error("unreachable");
          } else {
            return mc_monotonicity(pb, ts, RngStream::derive(seed_, 0xd3u));
          }
        },
        built_.problem);
  }
  mu_hat_ = scan.mu_hat;
  l1_hat_ = scan.l1_hat;

  mu_eff_ = mu_hat_;
  if (!(mu_eff_ > 1e-3)) {
    warn("diagnostics: strong monotonicity estimate " + fmt17(mu_hat_) +
         " is not usefully positive; burn-in arithmetic uses mu = 1e-3");
    mu_eff_ = 1e-3;
  }
  rho_eff_ = rho_hat_;
  if (!(rho_eff_ > 1e-3)) {
    warn("diagnostics: contraction estimate " + fmt17(rho_hat_) +
         " shows no one-step contraction; burn-in arithmetic uses rho = 1e-3");
    rho_eff_ = 1e-3;
  }
  rho_eff_ = std::min(rho_eff_, 1.0);

  // Small-sensitivity condition for the first-order bias theory.  The
  // threshold shrinks quadratically in both the contraction margin and the
  // monotonicity constant, so realistic kernels usually land outside it; the
  // warning exists to make that explicit rather than to block the run.
  sensitivity_threshold_ =
      rho_eff_ * rho_eff_ * mu_eff_ * mu_eff_ / (128.0 * l1_hat_ * l1_hat_ * (2.0 - rho_eff_));
  sensitivity_ok_ = lp_hat_ <= sensitivity_threshold_;
  if (!sensitivity_ok_) {
    warn("sensitivity regime: kernel sensitivity estimate " + fmt17(lp_hat_) +
         " exceeds the small-sensitivity threshold " + fmt17(sensitivity_threshold_) +
         " (rho_hat = " + fmt17(rho_hat_) + ", mu_hat = " + fmt17(mu_hat_) + ", l1_hat = " +
         fmt17(l1_hat_) + "); first-order scaling claims rest on the empirical fits");
  }

  sweep_schedule_.clear();
  for (double a : cfg_.alphas) sweep_schedule_.push_back(schedule(a, sweep_post_burn(a)));
}

void Pipeline::stage_sweep() {
  struct AlphaAgg {
    AlphaSchedule sched;
    BiasEstimate bias;
    double m2_mean = 0, m2_se = 0, m4_mean = 0, m4_se = 0;
    Eigen::MatrixXd m_alpha_mean;
  };
  std::vector<AlphaAgg> agg;
  ordered_json sweep_seeds = ordered_json::array();

  for (size_t i = 0; i < sweep_schedule_.size(); ++i) {
    const AlphaSchedule& s = sweep_schedule_[i];
    SAConfig sa;
    sa.alpha = s.alpha;
    sa.burn_in = s.burn_in;
    sa.n_steps = s.burn_in + s.post_burn;
    sa.seed = RngStream::derive(seed_, 0x5357u, i);
    sa.replica_count = cfg_.replicas;

    std::vector<SARunResult> runs = std::visit(
        [&](const auto& pb) { return run_replicas(pb, sa, root_.theta_star, threads_); },
        built_.problem);

    AlphaAgg a;
    a.sched = s;
    std::vector<Eigen::VectorXd> means;
    means.reserve(runs.size());
    double m2s = 0, m2s2 = 0, m4s = 0, m4s2 = 0;
    Eigen::MatrixXd msum = Eigen::MatrixXd::Zero(built_.dim, built_.dim);
    for (const auto& r : runs) {
      means.push_back(r.moments.mean());
      double m2 = r.moments.even_moment(2), m4 = r.moments.even_moment(4);
      m2s += m2;
      m2s2 += m2 * m2;
      m4s += m4;
      m4s2 += m4 * m4;
      msum += r.moments.second_moment_matrix() / s.alpha;
    }
    const double R = static_cast<double>(runs.size());
    a.bias = bias_estimate(means);
    a.m2_mean = m2s / R;
    a.m2_se = R > 1 ? std::sqrt(std::max(0.0, m2s2 / R - a.m2_mean * a.m2_mean) / (R - 1)) : 0.0;
    a.m4_mean = m4s / R;
    a.m4_se = R > 1 ? std::sqrt(std::max(0.0, m4s2 / R - a.m4_mean * a.m4_mean) / (R - 1)) : 0.0;
    a.m_alpha_mean = msum / R;
    agg.push_back(std::move(a));

    ordered_json entry;
    entry["alpha"] = s.alpha;
    entry["base"] = sa.seed;
    ordered_json reps = ordered_json::array();
    for (int r = 0; r < cfg_.replicas; ++r) reps.push_back(RngStream::derive(sa.seed, r));
    entry["replicas"] = reps;
    sweep_seeds.push_back(entry);
  }
  stream_seeds_["sweep"] = sweep_seeds;

  const double alpha_lo = agg.back().sched.alpha;
  const double alpha_hi = agg.front().sched.alpha;

  if (wants(cfg_, "bias")) {
    std::vector<ScalingRow> rows;
    for (const auto& a : agg) {
      rows.push_back({a.sched.alpha, a.bias.bias.norm(),
                      norm_std_error(a.bias.bias, a.bias.std_error), a.bias.n_replicas});
    }
    ScalingReport report = loglog_slope(rows);

    Csv csv({"alpha", "bias_norm", "std_error", "n_replicas"});
    for (const auto& r : report.rows)
      csv.row({r.alpha, r.estimate, r.std_error, static_cast<double>(r.n_replicas)});
    emit("scaling_bias.csv", csv.str());

    ordered_json j;
    j["analysis"] = "bias";
    j["rows"] = ordered_json::array();
    for (size_t i = 0; i < agg.size(); ++i) {
      ordered_json row;
      row["alpha"] = agg[i].sched.alpha;
      row["bias"] = to_json(agg[i].bias.bias);
      row["std_error"] = to_json(agg[i].bias.std_error);
      row["bias_norm"] = report.rows[i].estimate;
      row["std_error_norm"] = report.rows[i].std_error;
      row["n_replicas"] = agg[i].bias.n_replicas;
      row["burn_in"] = agg[i].sched.burn_in;
      row["post_burn_steps"] = agg[i].sched.post_burn;
      j["rows"].push_back(row);
    }
    j["fit"] = {{"slope", report.slope},
                {"slope_stderr", report.slope_stderr},
                {"intercept", report.intercept},
                {"r_squared", report.r_squared}};
    emit("scaling_bias.json", j.dump(2) + "\n");
    analysis_summary_["bias"] = j["fit"];

    PlotSeries data{"bias", {}, {}, true, true};
    for (const auto& r : report.rows) {
      data.x.push_back(r.alpha);
      data.y.push_back(r.estimate);
    }
    PlotSeries fitline{"fit slope " + std::string(fmt17(report.slope)).substr(0, 5),
                       {alpha_lo, alpha_hi},
                       fit_line_points(report.slope, report.intercept, alpha_lo, alpha_hi),
                       true,
                       false};
    write_svg((fs::path(out_dir_) / "plots" / "scaling_bias.svg").string(),
              {"stationary bias vs stepsize", "alpha", "||E[theta - theta*]||", true, true},
              {data, fitline});
    current_outputs_->push_back("plots/scaling_bias.svg");
  }

  if (wants(cfg_, "moments")) {
    auto write_moment = [&](const char* stem, int order, auto getter) {
      std::vector<ScalingRow> rows;
      for (const auto& a : agg) {
        auto [mean, se] = getter(a);
        rows.push_back({a.sched.alpha, mean, se, static_cast<int>(cfg_.replicas)});
      }
      ScalingReport report = loglog_slope(rows);

      Csv csv({"alpha", "moment", "std_error", "n_replicas"});
      for (const auto& r : report.rows)
        csv.row({r.alpha, r.estimate, r.std_error, static_cast<double>(r.n_replicas)});
      emit(std::string(stem) + ".csv", csv.str());

      ordered_json j;
      j["analysis"] = std::string("moment_") + std::to_string(order);
      j["rows"] = ordered_json::array();
      for (size_t i = 0; i < agg.size(); ++i) {
        ordered_json row;
        row["alpha"] = agg[i].sched.alpha;
        row["moment"] = report.rows[i].estimate;
        row["std_error"] = report.rows[i].std_error;
        row["n_replicas"] = cfg_.replicas;
        if (order == 2) row["m_alpha"] = to_json(agg[i].m_alpha_mean);
        j["rows"].push_back(row);
      }
      j["fit"] = {{"slope", report.slope},
                  {"slope_stderr", report.slope_stderr},
                  {"intercept", report.intercept},
                  {"r_squared", report.r_squared}};
      emit(std::string(stem) + ".json", j.dump(2) + "\n");
      analysis_summary_[std::string("m") + std::to_string(order)] = j["fit"];

      PlotSeries data{std::string("E||delta||^") + std::to_string(order), {}, {}, true, true};
      for (const auto& r : report.rows) {
        data.x.push_back(r.alpha);
        data.y.push_back(r.estimate);
      }
      PlotSeries fitline{"fit", {alpha_lo, alpha_hi},
                         fit_line_points(report.slope, report.intercept, alpha_lo, alpha_hi),
                         true, false};
      write_svg((fs::path(out_dir_) / "plots" / (std::string(stem) + ".svg")).string(),
                {std::string("moment of order ") + std::to_string(order) + " vs stepsize",
                 "alpha", "moment", true, true},
                {data, fitline});
      current_outputs_->push_back(std::string("plots/") + stem + ".svg");
    };
    write_moment("scaling_m2", 2, [](const AlphaAgg& a) { return std::pair(a.m2_mean, a.m2_se); });
    write_moment("scaling_m4", 4, [](const AlphaAgg& a) { return std::pair(a.m4_mean, a.m4_se); });
  }

  if (wants(cfg_, "rr")) {
    std::map<double, std::pair<Eigen::VectorXd, Eigen::VectorXd>> means;
    for (const auto& a : agg) means[a.sched.alpha] = {a.bias.bias, a.bias.std_error};
    std::vector<RRRow> rr = rr_extrapolate(means);
    std::sort(rr.begin(), rr.end(),
              [](const RRRow& x, const RRRow& y) { return x.alpha > y.alpha; });

    std::vector<ScalingRow> rows;
    for (const auto& r : rr)
      rows.push_back({r.alpha, r.value.norm(), norm_std_error(r.value, r.std_error),
                      cfg_.replicas});
    ScalingReport report = loglog_slope(rows);

    // Raw-bias slope over the matching stepsizes, for the side-by-side fit.
    std::vector<ScalingRow> raw_rows;
    for (const auto& a : agg) {
      raw_rows.push_back({a.sched.alpha, a.bias.bias.norm(),
                          norm_std_error(a.bias.bias, a.bias.std_error), a.bias.n_replicas});
    }
    ScalingReport raw_report = loglog_slope(raw_rows);

    Csv csv({"alpha", "rr_norm", "std_error", "raw_bias_norm"});
    for (const auto& r : rr) {
      double raw = means.at(r.alpha).first.norm();
      csv.row({r.alpha, r.value.norm(), norm_std_error(r.value, r.std_error), raw});
    }
    emit("rr.csv", csv.str());

    ordered_json j;
    j["analysis"] = "rr";
    j["rows"] = ordered_json::array();
    for (const auto& r : rr) {
      ordered_json row;
      row["alpha"] = r.alpha;
      row["value"] = to_json(r.value);
      row["std_error"] = to_json(r.std_error);
      row["value_norm"] = r.value.norm();
      j["rows"].push_back(row);
    }
    j["fit"] = {{"slope", report.slope},
                {"slope_stderr", report.slope_stderr},
                {"intercept", report.intercept},
                {"r_squared", report.r_squared}};
    j["raw_fit"] = {{"slope", raw_report.slope},
                    {"slope_stderr", raw_report.slope_stderr},
                    {"intercept", raw_report.intercept},
                    {"r_squared", raw_report.r_squared}};
    j["slope_gain"] = report.slope - raw_report.slope;
    emit("rr.json", j.dump(2) + "\n");
    analysis_summary_["rr"] = {{"slope", report.slope},
                               {"raw_slope", raw_report.slope},
                               {"slope_gain", report.slope - raw_report.slope}};

    PlotSeries raw{"raw bias", {}, {}, true, true};
    for (const auto& r : raw_rows) {
      raw.x.push_back(r.alpha);
      raw.y.push_back(r.estimate);
    }
    PlotSeries extr{"rr combination", {}, {}, true, true};
    for (const auto& r : rows) {
      extr.x.push_back(r.alpha);
      extr.y.push_back(r.estimate);
    }
    write_svg((fs::path(out_dir_) / "plots" / "rr.svg").string(),
              {"bias cancellation by stepsize pairing", "alpha", "bias norm", true, true},
              {raw, extr});
    current_outputs_->push_back("plots/rr.svg");
  }
}

void Pipeline::stage_clt() {
  const CltSettings& cs = cfg_.clt;
  AlphaSchedule s = schedule(cs.alpha, cs.steps);

  // Long-run covariance from one long trajectory.
  std::uint64_t sigma_seed = RngStream::derive(seed_, 0x434cu, 0);
  Eigen::MatrixXd series(cs.sigma_steps, built_.dim);
  {
    SAConfig sa;
    sa.alpha = cs.alpha;
    sa.burn_in = s.burn_in;
    sa.n_steps = s.burn_in + cs.sigma_steps;
    sa.seed = sigma_seed;
    long long idx = 0;
    std::visit(
        [&](const auto& pb) {
          run_sa(pb, sa, root_.theta_star, RngStream(sigma_seed),
                 [&](long long, const Eigen::VectorXd&, const auto&, const auto&,
                     const Eigen::VectorXd& after) {
                   series.row(idx++) = (after - root_.theta_star).transpose();
                 });
        },
        built_.problem);
  }
  GreenKuboEstimate gk = green_kubo(series, cs.max_lag);
  if (!gk.plateau) {
    warn("clt: long-run covariance partial sums did not plateau within max_lag = " +
         std::to_string(cs.max_lag) + "; the coverage test may use a biased covariance");
  }

  SAConfig sa;
  sa.alpha = cs.alpha;
  sa.burn_in = s.burn_in;
  sa.n_steps = s.burn_in + cs.steps;
  sa.seed = RngStream::derive(seed_, 0x434cu, 1);
  sa.replica_count = cs.replicas;
  std::vector<SARunResult> runs = std::visit(
      [&](const auto& pb) { return run_replicas(pb, sa, root_.theta_star, threads_); },
      built_.problem);
  Eigen::MatrixXd replica_means(cs.replicas, built_.dim);
  for (int r = 0; r < cs.replicas; ++r)
    replica_means.row(r) = runs[r].moments.mean().transpose();

  CLTCoverage cov = clt_coverage(replica_means, cs.steps, gk.sigma, cs.nominal);

  ordered_json j;
  j["analysis"] = "clt";
  j["alpha"] = cs.alpha;
  j["steps_per_replica"] = cs.steps;
  j["replicas"] = cs.replicas;
  j["burn_in"] = s.burn_in;
  j["coverage"] = cov.coverage;
  j["nominal"] = cov.nominal;
  j["n_inside"] = cov.n_inside;
  j["chi_square_threshold"] = cov.threshold;
  j["binomial_std_error"] =
      std::sqrt(cov.nominal * (1.0 - cov.nominal) / static_cast<double>(cs.replicas));
  j["sigma"] = to_json(gk.sigma);
  j["sigma_variance_term"] = to_json(gk.variance_term);
  j["sigma_truncation_lag"] = gk.truncation_lag;
  j["sigma_plateau"] = gk.plateau;
  j["sigma_steps"] = cs.sigma_steps;
  emit("clt.json", j.dump(2) + "\n");
  analysis_summary_["clt"] = {{"coverage", cov.coverage}, {"nominal", cov.nominal}};

  ordered_json seeds;
  seeds["sigma_chain"] = sigma_seed;
  seeds["replica_base"] = sa.seed;
  ordered_json reps = ordered_json::array();
  for (int r = 0; r < cs.replicas; ++r) reps.push_back(RngStream::derive(sa.seed, r));
  seeds["replicas"] = reps;
  stream_seeds_["clt"] = seeds;
}

void Pipeline::stage_coupling() {
  const CouplingSettings& cs = cfg_.coupling;
  AlphaSchedule s = schedule(cs.alpha, 0);
  std::uint64_t base = RngStream::derive(seed_, 0x4350u);

  SAConfig sa;
  sa.alpha = cs.alpha;
  sa.burn_in = 0;
  sa.n_steps = cs.steps;

  std::vector<CoupledTrace> traces(cs.pairs);
  std::visit(
      [&](const auto& pb) {
        using P = std::decay_t<decltype(pb)>;
        auto theta_b = pb.theta0;
        theta_b.array() += cs.theta_offset;
        auto x_b = pb.x0;
        if constexpr (std::is_same_v<P, FiniteProblem>) {
          x_b = (pb.x0 + 1) % pb.kernel.n_states();
        } else if constexpr (std::is_same_v<P, LangevinProblem>) {
          x_b = pb.x0;
          x_b.array() += 1.0;
        } else {
          x_b = pb.x0 + 1.0;
        }
        parallel_for(cs.pairs, threads_, [&](int p) {
          traces[p] = run_coupled(pb, sa, theta_b, x_b, RngStream::split(base, p));
        });
      },
      built_.problem);

  const long long n = cs.steps + 1;
  std::vector<double> mean_theta(n, 0.0), mean_x(n, 0.0), mean_joint(n, 0.0);
  long long met = 0;
  double meeting_sum = 0;
  for (const auto& t : traces) {
    for (long long k = 0; k < n; ++k) {
      mean_theta[k] += t.theta_d2[k];
      mean_x[k] += t.x_d2[k];
      mean_joint[k] += t.joint_d2[k];
    }
    if (t.meeting_step >= 0) {
      ++met;
      meeting_sum += static_cast<double>(t.meeting_step);
    }
  }
  for (long long k = 0; k < n; ++k) {
    mean_theta[k] /= cs.pairs;
    mean_x[k] /= cs.pairs;
    mean_joint[k] /= cs.pairs;
  }

  GeometricRateFit fit = geometric_rate_fit(mean_joint);

  Csv csv({"step", "mean_theta_d2", "mean_x_d2", "mean_joint_d2"});
  for (long long k = 0; k < n; ++k)
    csv.row({static_cast<double>(k), mean_theta[k], mean_x[k], mean_joint[k]});
  emit("coupling.csv", csv.str());

  ordered_json j;
  j["analysis"] = "coupling";
  j["alpha"] = cs.alpha;
  j["pairs"] = cs.pairs;
  j["steps"] = cs.steps;
  j["theta_offset"] = cs.theta_offset;
  j["rate"] = fit.rate;
  j["r_squared"] = fit.r_squared;
  j["fit_window"] = fit.window;
  j["tau"] = s.tau;
  j["rate_over_tau"] = num_or_null(-fit.rate / s.tau);
  j["met_fraction"] = static_cast<double>(met) / cs.pairs;
  j["mean_meeting_step"] = met > 0 ? ordered_json(meeting_sum / met) : ordered_json(nullptr);
  emit("coupling.json", j.dump(2) + "\n");
  analysis_summary_["coupling"] = {{"rate", fit.rate}, {"tau", s.tau}};

  PlotSeries joint{"joint d^2", {}, {}, true, false};
  PlotSeries theta{"theta d^2", {}, {}, true, false};
  for (long long k = 0; k < n; ++k) {
    joint.x.push_back(static_cast<double>(k));
    joint.y.push_back(mean_joint[k]);
    theta.x.push_back(static_cast<double>(k));
    theta.y.push_back(mean_theta[k]);
  }
  write_svg((fs::path(out_dir_) / "plots" / "coupling.svg").string(),
            {"coupled-chain contraction", "step", "mean squared distance", false, true},
            {joint, theta});
  current_outputs_->push_back("plots/coupling.svg");

  stream_seeds_["coupling"] = {{"base", base}, {"pairs", cs.pairs}};
}

void Pipeline::ensure_operators() {
  if (operators_ready_) return;
  const auto& pb = std::get<FiniteProblem>(built_.problem);
  p_star_ = pb.kernel.transition_matrix(root_.theta_star);
  pi_star_ = stationary_distribution(p_star_);
  Eigen::MatrixXd f = drift_table(pb.kernel, pb.map, root_.theta_star);
  poisson_ = poisson_solve_exact(p_star_, pi_star_, f);
  gateaux_ = std::make_unique<GateauxOperator>(
      gateaux_derivative(pb.kernel, root_.theta_star, poisson_.values, pi_star_));
  for (const auto& w : gateaux_->warnings) warn("kernel derivative: " + w);
  operators_ready_ = true;
}

void Pipeline::stage_wd_scan() {
  ensure_operators();
  const auto& pb = std::get<FiniteProblem>(built_.problem);
  const WdScanSettings& ws = cfg_.wd_scan;

  WDScanOptions opts;
  opts.radii.clear();
  for (int i = 0;; ++i) {
    double r = ws.radius_max * std::pow(10.0, -static_cast<double>(i) / ws.points_per_decade);
    if (r < ws.radius_min * (1.0 - 1e-9)) break;
    opts.radii.push_back(r);
  }
  opts.n_random_directions = ws.random_directions;
  opts.seed = RngStream::derive(seed_, 0x5744u);

  WDRemainderReport report =
      wd_remainder_scan(pb.kernel, root_.theta_star, poisson_.values, *gateaux_, opts);
  if (report.violation) {
    warn("wd_scan: remainder exponent " + fmt17(report.fitted_exponent) +
         " falls below the quadratic regime; the kernel family is not smooth enough at "
         "theta* for first-order bias claims");
  }

  Csv csv({"radius", "sup_remainder"});
  for (size_t i = 0; i < report.radii.size(); ++i)
    csv.row({report.radii[i], report.sup_remainders[i]});
  emit("wd_scan.csv", csv.str());

  ordered_json j;
  j["analysis"] = "wd_scan";
  j["fitted_exponent"] = report.fitted_exponent;
  j["c_wd_hat"] = num_or_null(report.c_wd_hat);
  j["violation"] = report.violation;
  j["exact_linear"] = report.exact_linear;
  j["n_directions"] = report.n_directions;
  j["radii"] = report.radii;
  j["sup_remainders"] = report.sup_remainders;
  j["lambda_bar"] = to_json(gateaux_->lambda_bar);
  j["gateaux_fd_step"] = gateaux_->fd_step_used;
  j["gateaux_richardson_error"] = gateaux_->richardson_error;
  j["poisson_equation_residual"] = poisson_.equation_residual;
  j["poisson_centering_residual"] = poisson_.centering_residual;
  emit("wd_scan.json", j.dump(2) + "\n");
  analysis_summary_["wd_scan"] = {{"fitted_exponent", report.fitted_exponent},
                                  {"violation", report.violation}};

  PlotSeries data{"sup remainder", report.radii, report.sup_remainders, true, true};
  PlotSeries quad{"c r^2", {}, {}, true, false};
  if (std::isfinite(report.c_wd_hat) && report.c_wd_hat > 0) {
    for (double r : report.radii) {
      quad.x.push_back(r);
      quad.y.push_back(report.c_wd_hat * r * r);
    }
  }
  write_svg((fs::path(out_dir_) / "plots" / "wd_scan.svg").string(),
            {"kernel derivative remainder", "radius", "sup remainder", true, true},
            {data, quad});
  current_outputs_->push_back("plots/wd_scan.svg");
}

void Pipeline::stage_decomposition() {
  ensure_operators();
  const auto& pb = std::get<FiniteProblem>(built_.problem);
  const DecompositionSettings& ds = cfg_.decomposition;
  AlphaSchedule s = schedule(ds.alpha, 0);

  const long long gap = static_cast<long long>(std::ceil(4.0 / s.tau));
  const long long n_steps = s.burn_in + gap * ds.samples_per_replica;
  std::uint64_t base = RngStream::derive(seed_, 0x4443u);

  std::vector<std::vector<StationaryTriple>> samples(ds.replicas);
  SAConfig sa;
  sa.alpha = ds.alpha;
  sa.burn_in = s.burn_in;
  sa.n_steps = n_steps;
  parallel_for(ds.replicas, threads_, [&](int r) {
    auto& mine = samples[r];
    mine.reserve(ds.samples_per_replica);
    run_sa(pb, sa, root_.theta_star, RngStream::split(base, r),
           [&](long long k, const Eigen::VectorXd& theta_before, const int& x_before,
               const int& x_after, const Eigen::VectorXd&) {
             if ((k - sa.burn_in) % gap == 0)
               mine.push_back(StationaryTriple{theta_before, x_before, x_after});
           });
  });

  DecompositionInputs inputs;
  inputs.theta_star = root_.theta_star;
  inputs.jacobian = root_.jacobian;
  inputs.ghat = poisson_.values;
  inputs.lambda_bar = gateaux_->lambda_bar;
  BiasTermDecomposition dec = bias_term_decomposition(pb.kernel, pb.map, inputs, samples);

  BiasOperator op = bias_operator(gateaux_->lambda_bar, root_.jacobian);
  Eigen::VectorXd recon = Eigen::VectorXd::Constant(built_.dim,
                                                    std::numeric_limits<double>::quiet_NaN());
  if (op.invertible) {
    Eigen::VectorXd rhs = dec.term_i.value - gateaux_->lambda_bar * dec.bias_hat +
                          dec.term_ii_fluct.value + dec.term_iii.value + dec.term_iv.value;
    recon = -op.matrix.partialPivLu().solve(rhs);
  } else {
    warn("decomposition: bias operator is numerically singular (smallest singular value " +
         fmt17(op.min_singular_value) + "); skipping the first-order reconstruction");
  }

  auto term_json = [](const TermStat& t) {
    return ordered_json{{"value", to_json(t.value)}, {"std_error", to_json(t.std_error)}};
  };
  ordered_json j;
  j["analysis"] = "decomposition";
  j["alpha"] = ds.alpha;
  j["replicas"] = dec.n_replicas;
  j["samples_per_replica"] = ds.samples_per_replica;
  j["total_samples"] = dec.n_samples;
  j["thin_gap"] = gap;
  j["burn_in"] = s.burn_in;
  j["tau"] = s.tau;
  j["terms"] = {{"kernel_response", term_json(dec.term_i)},
                {"jacobian_fluctuation", term_json(dec.term_ii_fluct)},
                {"curvature", term_json(dec.term_iii)},
                {"taylor_remainder", term_json(dec.term_iv)}};
  j["bias_hat"] = to_json(dec.bias_hat);
  j["bias_se"] = to_json(dec.bias_se);
  j["residual"] = to_json(dec.residual);
  j["residual_se"] = to_json(dec.residual_se);
  j["fd_step_used"] = dec.fd_step_used;
  j["operator"] = {{"matrix", to_json(op.matrix)},
                   {"min_singular_value", op.min_singular_value},
                   {"invertible", op.invertible}};
  j["reconstructed_bias"] = to_json(recon);
  j["reconstruction_gap"] =
      op.invertible ? ordered_json(num_or_null((recon - dec.bias_hat).norm()))
                    : ordered_json(nullptr);
  emit("decomposition.json", j.dump(2) + "\n");
  analysis_summary_["decomposition"] = {
      {"bias_hat", to_json(dec.bias_hat)},
      {"residual", to_json(dec.residual)},
  };

  ordered_json seeds;
  seeds["base"] = base;
  ordered_json reps = ordered_json::array();
  for (int r = 0; r < ds.replicas; ++r) reps.push_back(RngStream::derive(base, r));
  seeds["replicas"] = reps;
  stream_seeds_["decomposition"] = seeds;
}

void Pipeline::write_manifest() {
  ordered_json m;
  m["format"] = "salab-manifest-v1";
  m["tool_version"] = "0.1.0";
  m["source"] = cfg_.source_name;
  m["config_sha"] = hex64(fnv1a64(cfg_.source_text));
  m["seed"] = seed_;
  m["analyses"] = cfg_.analyses;
  m["problem"] = {{"kernel", built_.kernel_name},
                  {"map", built_.map_name},
                  {"finite", built_.finite},
                  {"dim", built_.dim}};

  ordered_json diag;
  if (prereq_ok_) {
    diag["theta_star"] = to_json(root_.theta_star);
    diag["root_residual"] = root_.residual;
    diag["root_method"] =
        root_.method == RootMethod::exact_finite ? "exact_finite" : "monte_carlo";
    diag["jacobian"] = to_json(root_.jacobian);
    diag["jacobian_error"] = root_.jacobian_error;
    diag["rho_hat"] = rho_hat_;
    diag["rho_ci_width"] = rho_ci_;
    diag["lp_hat"] = lp_hat_;
    diag["mu_hat"] = num_or_null(mu_hat_);
    diag["l1_hat"] = l1_hat_;
    diag["mu_effective"] = mu_eff_;
    diag["rho_effective"] = rho_eff_;
    diag["sensitivity_threshold"] = sensitivity_threshold_;
    diag["sensitivity_ok"] = sensitivity_ok_;
    ordered_json per_alpha = ordered_json::array();
    for (const auto& s : sweep_schedule_) {
      per_alpha.push_back({{"alpha", s.alpha},
                           {"tau", s.tau},
                           {"burn_in", s.burn_in},
                           {"post_burn_steps", s.post_burn}});
    }
    diag["sweep_schedule"] = per_alpha;
  }
  m["diagnostics"] = diag;

  ordered_json stages = ordered_json::array();
  for (const auto& s : result_.stages) {
    ordered_json e;
    e["name"] = s.name;
    e["ok"] = s.ok;
    if (!s.ok) e["error"] = s.error;
    e["outputs"] = s.outputs;
    stages.push_back(e);
  }
  m["stages"] = stages;
  m["summary"] = analysis_summary_;
  m["warnings"] = warnings_;
  m["stream_seeds"] = stream_seeds_;
  m["config_text"] = cfg_.source_text;

  write_text(fs::path(out_dir_) / "manifest.json", m.dump(2) + "\n");

  // Wall-clock timings and the worker count live in a separate file so that
  // every analysis artifact, the manifest included, is byte-reproducible for
  // a given config and seed regardless of hardware or thread count.
  ordered_json t;
  t["threads"] = threads_;
  ordered_json stage_ms;
  for (const auto& s : result_.stages) stage_ms[s.name] = s.wall_ms;
  t["stage_wall_ms"] = stage_ms;
  write_text(fs::path(out_dir_) / "timings.json", t.dump(2) + "\n");
}

ExperimentResult Pipeline::run() {
  fs::create_directories(fs::path(out_dir_) / "plots");
  result_.output_dir = out_dir_;

  prereq_error_ = "root stage failed";
  stage("root", [&] { stage_root(); });
  if (!result_.stages.back().ok) {
    prereq_ok_ = false;
    prereq_error_ = "root stage failed: " + result_.stages.back().error;
  }
  stage("diagnostics", [&] { stage_diagnostics(); });
  if (prereq_ok_ && !result_.stages.back().ok) {
    prereq_ok_ = false;
    prereq_error_ = "diagnostics stage failed: " + result_.stages.back().error;
  }

  if (wants(cfg_, "bias") || wants(cfg_, "moments") || wants(cfg_, "rr")) {
    stage("sweep", [&] { stage_sweep(); });
  }
  if (wants(cfg_, "clt")) stage("clt", [&] { stage_clt(); });
  if (wants(cfg_, "coupling")) stage("coupling", [&] { stage_coupling(); });
  if (wants(cfg_, "wd_scan")) stage("wd_scan", [&] { stage_wd_scan(); });
  if (wants(cfg_, "decomposition")) stage("decomposition", [&] { stage_decomposition(); });

  result_.warnings = warnings_;
  write_manifest();
  return result_;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  Pipeline p(cfg, opts);
  return p.run();
}

bool looks_like_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char c;
  while (in.get(c)) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    return c == '{';
  }
  return false;
}

ExperimentConfig config_from_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw ConfigError(manifest_path + ": cannot open file");
  ordered_json m;
  try {
    in >> m;
  } catch (const std::exception& e) {
    throw ConfigError(manifest_path + ": not valid manifest JSON: " + e.what());
  }
  if (!m.contains("config_text") || !m["config_text"].is_string())
    throw ConfigError(manifest_path + ": manifest has no embedded config_text");
  std::string text = m["config_text"].get<std::string>();
  // Keep the original source name so a replayed run writes the same manifest
  // bytes as the run it reproduces.
  std::string source = m.contains("source") && m["source"].is_string()
                           ? m["source"].get<std::string>()
                           : manifest_path + " (embedded config)";
  ExperimentConfig cfg = validate_config(parse_config_text(text, source));
  if (m.contains("seed") && m["seed"].is_number_unsigned())
    cfg.seed = m["seed"].get<std::uint64_t>();
  return cfg;
}

}  // namespace salab
