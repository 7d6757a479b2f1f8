#include "salab/estimators.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace salab {

BiasEstimate bias_estimate(const std::vector<Eigen::VectorXd>& replica_means) {
  if (replica_means.size() < 2)
    throw std::invalid_argument("bias_estimate: requires at least 2 replicas");
  const int r = static_cast<int>(replica_means.size());
  const int d = static_cast<int>(replica_means[0].size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& m : replica_means) {
    if (m.size() != d) throw std::invalid_argument("bias_estimate: dimension mismatch");
    mean += m;
  }
  mean /= r;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& m : replica_means) var += (m - mean).cwiseAbs2();
  var /= (r - 1);

  BiasEstimate out;
  out.bias = std::move(mean);
  out.std_error = (var / r).cwiseSqrt();
  out.n_replicas = r;
  return out;
}

ScalingReport loglog_slope(std::vector<ScalingRow> rows) {
  if (rows.size() < 2)
    throw std::invalid_argument("loglog_slope: need at least two stepsizes");
  std::vector<double> lx, ly, w;
  bool all_weighted = true;
  for (const auto& row : rows) {
    if (!(row.alpha > 0)) throw std::invalid_argument("loglog_slope: alpha must be positive");
    if (!(row.estimate > 0)) {
      std::ostringstream os;
      os << "loglog_slope: estimate " << row.estimate << " at alpha " << row.alpha
         << " is not positive; increase replicas or run length until the "
            "signal clears the noise floor";
      throw std::runtime_error(os.str());
    }
    if (!(row.std_error > 0)) all_weighted = false;
  }
  for (const auto& row : rows) {
    lx.push_back(std::log(row.alpha));
    ly.push_back(std::log(row.estimate));
    if (all_weighted) {
      double rel = row.std_error / row.estimate;
      w.push_back(1.0 / (rel * rel));
    } else {
      w.push_back(1.0);
    }
  }
  LineFit fit = fit_line_weighted(lx, ly, w);

  ScalingReport report;
  report.rows = std::move(rows);
  report.slope = fit.slope;
  report.slope_stderr = fit.slope_stderr;
  report.intercept = fit.intercept;
  report.r_squared = fit.r_squared;
  return report;
}

std::vector<RRRow> rr_extrapolate(
    const std::map<double, std::pair<Eigen::VectorXd, Eigen::VectorXd>>& means) {
  std::vector<RRRow> rows;
  for (const auto& [alpha, stat] : means) {
    // Find 2*alpha among the keys, tolerating floating-point representation.
    auto it = means.lower_bound(2.0 * alpha * (1.0 - 1e-9));
    if (it == means.end() || std::abs(it->first - 2.0 * alpha) > 1e-9 * alpha) continue;
    RRRow row;
    row.alpha = alpha;
    row.value = 2.0 * stat.first - it->second.first;
    row.std_error =
        (4.0 * stat.second.cwiseAbs2() + it->second.second.cwiseAbs2()).cwiseSqrt();
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw std::invalid_argument(
        "rr_extrapolate: no stepsize pairs (alpha, 2 alpha) found in the grid");
  return rows;
}

GreenKuboEstimate green_kubo(const Eigen::MatrixXd& series, int max_lag) {
  const long long n = series.rows();
  const int m = static_cast<int>(series.cols());
  if (max_lag < 1) throw std::invalid_argument("green_kubo: max_lag must be >= 1");
  if (n < 50LL * max_lag)
    throw std::invalid_argument(
        "green_kubo: series too short; need at least 50 * max_lag samples");

  Eigen::RowVectorXd mean = series.colwise().mean();
  Eigen::MatrixXd centered = series.rowwise() - mean;

  auto lag_cov = [&](int k) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
    for (long long t = 0; t + k < n; ++t)
      g.noalias() += centered.row(t).transpose() * centered.row(t + k);
    return Eigen::MatrixXd(g / static_cast<double>(n));
  };

  GreenKuboEstimate est;
  est.variance_term = lag_cov(0);
  Eigen::MatrixXd sum = est.variance_term;

  // Rolling window of partial-sum norms for the plateau rule.
  std::vector<double> recent;
  recent.push_back(sum.norm());
  int stop = max_lag;
  bool plateau = false;
  for (int k = 1; k <= max_lag; ++k) {
    Eigen::MatrixXd gk = lag_cov(k);
    est.lag_covariances.push_back(gk);
    sum += gk + gk.transpose();
    recent.push_back(sum.norm());
    if (recent.size() > 6) recent.erase(recent.begin());
    if (k >= 5) {
      double now = recent.back();
      double before = recent.front();
      if (now > 0 && std::abs(now - before) / now < 1e-3) {
        stop = k;
        plateau = true;
        break;
      }
    }
  }
  est.truncation_lag = stop;
  est.plateau = plateau;
  est.sigma = sum;
  return est;
}

CLTCoverage clt_coverage(const Eigen::MatrixXd& replica_means, long long steps_per_replica,
                         const Eigen::MatrixXd& sigma, double nominal) {
  const int r = static_cast<int>(replica_means.rows());
  const int m = static_cast<int>(replica_means.cols());
  if (r < 200)
    throw std::invalid_argument("clt_coverage: requires at least 200 replicas");
  if (steps_per_replica < 1)
    throw std::invalid_argument("clt_coverage: steps_per_replica must be >= 1");
  if (sigma.rows() != m || sigma.cols() != m)
    throw std::invalid_argument("clt_coverage: sigma dimension mismatch");
  if (!(nominal > 0 && nominal < 1))
    throw std::invalid_argument("clt_coverage: nominal level must be in (0,1)");

  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "clt_coverage: sigma is not positive definite (singular covariance)");

  Eigen::RowVectorXd grand = replica_means.colwise().mean();
  const double scale = std::sqrt(static_cast<double>(steps_per_replica));
  const double threshold = chi_square_quantile(nominal, m);

  int inside = 0;
  for (int i = 0; i < r; ++i) {
    Eigen::VectorXd y = scale * (replica_means.row(i) - grand).transpose();
    double stat = y.dot(llt.solve(y));
    if (stat <= threshold) ++inside;
  }

  CLTCoverage out;
  out.coverage = static_cast<double>(inside) / r;
  out.threshold = threshold;
  out.n_replicas = r;
  out.n_inside = inside;
  out.nominal = nominal;
  return out;
}

GeometricRateFit geometric_rate_fit(const std::vector<double>& mean_sq_distance) {
  int window = 0;
  while (window < static_cast<int>(mean_sq_distance.size()) &&
         mean_sq_distance[window] > 0)
    ++window;
  if (window < 3)
    throw std::runtime_error(
        "geometric_rate_fit: distances vanish within two steps (degenerate fit); "
        "start the pair farther apart");

  std::vector<double> x, y;
  x.reserve(window);
  y.reserve(window);
  for (int k = 0; k < window; ++k) {
    x.push_back(static_cast<double>(k));
    y.push_back(std::log(mean_sq_distance[k]));
  }
  LineFit fit = fit_line(x, y);

  GeometricRateFit out;
  out.rate = fit.slope;
  out.r_squared = fit.r_squared;
  out.window = window;
  return out;
}

BiasTermDecomposition bias_term_decomposition(
    const FiniteKernel& kernel, const FiniteMap& map, const DecompositionInputs& inputs,
    const std::vector<std::vector<StationaryTriple>>& replica_samples) {
  const int d = static_cast<int>(inputs.theta_star.size());
  const int n_states = kernel.n_states();
  if (inputs.ghat.rows() != n_states || inputs.ghat.cols() != d)
    throw std::invalid_argument("bias_term_decomposition: ghat must be n_states x d");
  if (inputs.jacobian.rows() != d || inputs.jacobian.cols() != d ||
      inputs.lambda_bar.rows() != d || inputs.lambda_bar.cols() != d)
    throw std::invalid_argument("bias_term_decomposition: operator shape mismatch");
  if (replica_samples.size() < 2)
    throw std::invalid_argument("bias_term_decomposition: requires at least 2 replicas");

  const double h = inputs.fd_step * (1.0 + inputs.theta_star.norm());
  Eigen::MatrixXd p_star = kernel.transition_matrix(inputs.theta_star);
  Eigen::MatrixXd p_star_ghat = p_star * inputs.ghat;  // n_states x d

  // g'(theta*, x) for every state by central differences, d x d each.
  std::vector<Eigen::MatrixXd> gprime(n_states, Eigen::MatrixXd(d, d));
  std::vector<Eigen::VectorXd> g_at_star(n_states, Eigen::VectorXd(d));
  {
    Eigen::VectorXd probe = inputs.theta_star;
    Eigen::VectorXd plus(d), minus(d);
    for (int x = 0; x < n_states; ++x) map.eval_into(inputs.theta_star, x, g_at_star[x]);
    for (int j = 0; j < d; ++j) {
      for (int x = 0; x < n_states; ++x) {
        probe[j] = inputs.theta_star[j] + h;
        map.eval_into(probe, x, plus);
        probe[j] = inputs.theta_star[j] - h;
        map.eval_into(probe, x, minus);
        probe[j] = inputs.theta_star[j];
        gprime[x].col(j) = (plus - minus) / (2.0 * h);
      }
    }
  }

  const int n_rep = static_cast<int>(replica_samples.size());
  Eigen::MatrixXd rep_i(n_rep, d), rep_ii(n_rep, d), rep_iii(n_rep, d), rep_iv(n_rep, d),
      rep_bias(n_rep, d), rep_res(n_rep, d);

  std::vector<double> row_theta(n_states);
  Eigen::VectorXd gx(d), g_plus(d), g_minus(d), delta(d);
  long long total = 0;

  for (int rix = 0; rix < n_rep; ++rix) {
    const auto& samples = replica_samples[rix];
    if (samples.empty())
      throw std::invalid_argument("bias_term_decomposition: empty replica sample set");
    Eigen::VectorXd sum_i = Eigen::VectorXd::Zero(d), sum_ii = Eigen::VectorXd::Zero(d),
                    sum_iii = Eigen::VectorXd::Zero(d), sum_iv = Eigen::VectorXd::Zero(d),
                    sum_bias = Eigen::VectorXd::Zero(d);
    for (const auto& s : samples) {
      delta = s.theta - inputs.theta_star;

      // (I): ((P_theta - P_theta*) ghat)(x), exact rows.
      kernel.row_into(s.theta, s.x, row_theta.data());
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int y = 0; y < n_states; ++y) acc += row_theta[y] * inputs.ghat(y, c);
        sum_i[c] += acc - p_star_ghat(s.x, c);
      }

      // (II)': (g'(theta*, x') - J*) delta.
      sum_ii += (gprime[s.x_next] - inputs.jacobian) * delta;

      // (III): second directional difference along delta.
      double dn = delta.norm();
      Eigen::VectorXd third = Eigen::VectorXd::Zero(d);
      if (dn > 0) {
        double s2 = h / dn;
        map.eval_into(inputs.theta_star + s2 * delta, s.x_next, g_plus);
        map.eval_into(inputs.theta_star - s2 * delta, s.x_next, g_minus);
        third = (g_plus - 2.0 * g_at_star[s.x_next] + g_minus) / (s2 * s2);
      }
      sum_iii += 0.5 * third;

      // (IV): what the quadratic Taylor model misses at the realized theta.
      map.eval_into(s.theta, s.x_next, gx);
      sum_iv += gx - g_at_star[s.x_next] - gprime[s.x_next] * delta - 0.5 * third;

      sum_bias += delta;
    }
    double inv = 1.0 / static_cast<double>(samples.size());
    rep_i.row(rix) = (sum_i * inv).transpose();
    rep_ii.row(rix) = (sum_ii * inv).transpose();
    rep_iii.row(rix) = (sum_iii * inv).transpose();
    rep_iv.row(rix) = (sum_iv * inv).transpose();
    rep_bias.row(rix) = (sum_bias * inv).transpose();
    total += static_cast<long long>(samples.size());
  }

  // Per-replica reconstruction: (lambda_bar + J*) bias_r + (I)'_r + (II)'_r +
  // (III)_r + (IV)_r with (I)'_r = (I)_r - lambda_bar bias_r.  Algebraically
  // this equals (I)_r + (II)_r + (III)_r + (IV)_r, the stationarity identity.
  Eigen::MatrixXd op = inputs.lambda_bar + inputs.jacobian;
  for (int rix = 0; rix < n_rep; ++rix) {
    Eigen::VectorXd b = rep_bias.row(rix).transpose();
    Eigen::VectorXd ip = rep_i.row(rix).transpose() - inputs.lambda_bar * b;
    rep_res.row(rix) =
        (op * b + ip + rep_ii.row(rix).transpose() + rep_iii.row(rix).transpose() +
         rep_iv.row(rix).transpose())
            .transpose();
  }

  auto summarize = [&](const Eigen::MatrixXd& rep) {
    TermStat t;
    t.value = rep.colwise().mean().transpose();
    Eigen::MatrixXd c = rep.rowwise() - rep.colwise().mean();
    t.std_error =
        (c.cwiseAbs2().colwise().sum() / (n_rep * static_cast<double>(n_rep - 1)))
            .cwiseSqrt()
            .transpose();
    return t;
  };

  BiasTermDecomposition out;
  out.term_i = summarize(rep_i);
  out.term_ii_fluct = summarize(rep_ii);
  out.term_iii = summarize(rep_iii);
  out.term_iv = summarize(rep_iv);
  TermStat bias = summarize(rep_bias);
  out.bias_hat = bias.value;
  out.bias_se = bias.std_error;
  TermStat res = summarize(rep_res);
  out.residual = res.value;
  out.residual_se = res.std_error;
  out.n_replicas = n_rep;
  out.n_samples = total;
  out.fd_step_used = h;
  return out;
}

}  // namespace salab
