#include "salab/mean_field.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace salab {

FiniteMap FiniteMap::linear_hx(Eigen::MatrixXd h_table) {
  int d = static_cast<int>(h_table.cols());
  return linear_general(-Eigen::MatrixXd::Identity(d, d), std::move(h_table));
}

FiniteMap FiniteMap::linear_general(Eigen::MatrixXd a, Eigen::MatrixXd h_table) {
  if (h_table.rows() < 2 || h_table.cols() < 1)
    throw std::invalid_argument("map.h: need one row per state, one column per parameter");
  if (a.rows() != a.cols() || a.rows() != h_table.cols())
    throw std::invalid_argument("map.a: must be d x d matching the h table");
  FiniteMap m;
  m.dim_ = static_cast<int>(h_table.cols());
  m.n_states_ = static_cast<int>(h_table.rows());
  m.a_ = std::move(a);
  m.h_ = std::move(h_table);
  return m;
}

FiniteMap FiniteMap::tanh_mix(Eigen::VectorXd h_table, double mix_coeff, double mix_center) {
  if (h_table.size() < 2)
    throw std::invalid_argument("map.h: need one entry per state");
  if (!(mix_coeff >= 0))
    throw std::invalid_argument("map.mix_coeff: must be nonnegative");
  FiniteMap m;
  m.dim_ = 1;
  m.n_states_ = static_cast<int>(h_table.size());
  m.a_ = -Eigen::MatrixXd::Identity(1, 1);
  m.h_ = h_table;
  m.mix_coeff_ = mix_coeff;
  m.mix_center_ = mix_center;
  return m;
}

FiniteMap FiniteMap::table(Eigen::VectorXd theta_grid, Eigen::MatrixXd values) {
  if (theta_grid.size() < 2)
    throw std::invalid_argument("map.theta_grid: need at least two grid points");
  for (int i = 1; i < theta_grid.size(); ++i)
    if (!(theta_grid[i] > theta_grid[i - 1]))
      throw std::invalid_argument("map.theta_grid: must be strictly increasing");
  if (values.rows() != theta_grid.size() || values.cols() < 2)
    throw std::invalid_argument("map.values: need n_grid rows and one column per state");
  FiniteMap m;
  m.dim_ = 1;
  m.n_states_ = static_cast<int>(values.cols());
  m.tabular_ = true;
  m.grid_ = std::move(theta_grid);
  m.values_ = std::move(values);
  return m;
}

double FiniteMap::table_lookup(double theta, int x) const {
  const int n = static_cast<int>(grid_.size());
  if (theta <= grid_[0]) return values_(0, x);
  if (theta >= grid_[n - 1]) return values_(n - 1, x);
  int lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    if (grid_[mid] <= theta)
      lo = mid;
    else
      hi = mid;
  }
  double w = (theta - grid_[lo]) / (grid_[hi] - grid_[lo]);
  return (1.0 - w) * values_(lo, x) + w * values_(hi, x);
}

MeanFieldValue mean_field_eval(const FiniteKernel& kernel, const FiniteMap& map,
                               const Eigen::VectorXd& theta) {
  if (map.n_states() != kernel.n_states())
    throw std::invalid_argument("mean_field_eval: map and kernel disagree on n_states");
  Eigen::MatrixXd P = kernel.transition_matrix(theta);
  Eigen::VectorXd pi = stationary_distribution(P);
  Eigen::VectorXd value = Eigen::VectorXd::Zero(map.dim());
  Eigen::VectorXd gx(map.dim());
  for (int x = 0; x < kernel.n_states(); ++x) {
    map.eval_into(theta, x, gx);
    value += pi[x] * gx;
  }
  return MeanFieldValue{std::move(value), 0.0, true};
}

RootCertificate find_root(const FiniteKernel& kernel, const FiniteMap& map,
                          const Eigen::VectorXd& theta0, const LipschitzHints& hints,
                          const RootOptions& opts) {
  Eigen::VectorXd theta = theta0;
  auto residual_of = [&](const Eigen::VectorXd& t) {
    return mean_field_eval(kernel, map, t).value;
  };

  double eta_hint = 0.0;
  if (hints.mu && hints.l1) {
    if (!(*hints.mu > 0) || !(*hints.l1 > 0))
      throw std::invalid_argument("find_root: hints must be positive when given");
    eta_hint = *hints.mu / (*hints.l1 * *hints.l1);
  }

  Eigen::VectorXd gbar = residual_of(theta);
  double res = gbar.norm();
  int iter = 0;
  for (; iter < opts.max_iter && res > opts.tol; ++iter) {
    double eta = eta_hint > 0 ? eta_hint : 1.0;
    Eigen::VectorXd cand = theta + eta * gbar;
    Eigen::VectorXd gcand = residual_of(cand);
    // Backtrack until the residual decreases; strong monotonicity guarantees
    // a decrease for small enough steps.
    int halvings = 0;
    while (gcand.norm() >= res && halvings < 60) {
      eta *= 0.5;
      cand = theta + eta * gbar;
      gcand = residual_of(cand);
      ++halvings;
    }
    if (gcand.norm() >= res) {
      std::ostringstream os;
      os << "find_root: stalled at residual " << res << " after " << iter << " iterations";
      throw std::runtime_error(os.str());
    }
    theta = cand;
    gbar = gcand;
    res = gbar.norm();
  }
  if (res > opts.tol) {
    std::ostringstream os;
    os << "find_root: residual " << res << " above tolerance " << opts.tol << " after "
       << opts.max_iter << " iterations";
    throw std::runtime_error(os.str());
  }

  JacobianResult jac = jacobian_at(kernel, map, theta, opts.fd_step);
  RootCertificate cert;
  cert.theta_star = std::move(theta);
  cert.residual = res;
  cert.jacobian = std::move(jac.jacobian);
  cert.jacobian_error = jac.richardson_error;
  cert.method = RootMethod::exact_finite;
  return cert;
}

JacobianResult jacobian_at(const FiniteKernel& kernel, const FiniteMap& map,
                           const Eigen::VectorXd& theta, double fd_step) {
  if (!(fd_step > 0)) throw std::invalid_argument("jacobian_at: fd_step must be positive");
  const int d = static_cast<int>(theta.size());
  double h = fd_step * (1.0 + theta.norm());

  auto central = [&](double step) {
    Eigen::MatrixXd D(map.dim(), d);
    Eigen::VectorXd probe = theta;
    for (int j = 0; j < d; ++j) {
      probe[j] = theta[j] + step;
      Eigen::VectorXd plus = mean_field_eval(kernel, map, probe).value;
      probe[j] = theta[j] - step;
      Eigen::VectorXd minus = mean_field_eval(kernel, map, probe).value;
      probe[j] = theta[j];
      D.col(j) = (plus - minus) / (2.0 * step);
    }
    return D;
  };

  Eigen::MatrixXd coarse = central(h);
  Eigen::MatrixXd fine = central(0.5 * h);
  JacobianResult out;
  out.jacobian = (4.0 * fine - coarse) / 3.0;
  out.richardson_error = (fine - coarse).cwiseAbs().maxCoeff();
  out.fd_step_used = h;
  return out;
}

MonotonicityScan monotonicity_scan(const FiniteKernel& kernel, const FiniteMap& map,
                                   double lo, double hi, int n_points, std::uint64_t seed) {
  if (!(hi > lo)) throw std::invalid_argument("monotonicity_scan: need hi > lo");
  if (n_points < 2) throw std::invalid_argument("monotonicity_scan: need n_points >= 2");
  const int d = map.dim();

  std::vector<Eigen::VectorXd> pts;
  pts.reserve(n_points);
  if (d == 1) {
    for (int i = 0; i < n_points; ++i) {
      Eigen::VectorXd t(1);
      t[0] = lo + (hi - lo) * i / (n_points - 1);
      pts.push_back(t);
    }
  } else {
    RngStream rng = RngStream::split(seed, 0x6d6fu);
    for (int i = 0; i < n_points; ++i) {
      Eigen::VectorXd t(d);
      for (int j = 0; j < d; ++j) t[j] = lo + (hi - lo) * rng.uniform();
      pts.push_back(t);
    }
  }

  std::vector<Eigen::VectorXd> vals;
  vals.reserve(pts.size());
  for (const auto& t : pts) vals.push_back(mean_field_eval(kernel, map, t).value);

  MonotonicityScan scan;
  scan.n_points = static_cast<int>(pts.size());
  double mu = std::numeric_limits<double>::infinity();
  double l1 = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      Eigen::VectorXd dt = pts[i] - pts[j];
      Eigen::VectorXd dg = vals[i] - vals[j];
      double n2 = dt.squaredNorm();
      mu = std::min(mu, -dt.dot(dg) / n2);
      l1 = std::max(l1, dg.norm() / std::sqrt(n2));
    }
  }
  scan.mu_hat = mu;
  scan.l1_hat = l1;
  return scan;
}

}  // namespace salab
