#include "salab/gateaux.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "salab/stats.hpp"

namespace salab {

Eigen::MatrixXd GateauxOperator::apply(const Eigen::VectorXd& u) const {
  if (basis_action.empty()) throw std::runtime_error("GateauxOperator: empty operator");
  if (u.size() != static_cast<Eigen::Index>(basis_action.size()))
    throw std::invalid_argument("GateauxOperator::apply: direction dimension mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(basis_action[0].rows(), basis_action[0].cols());
  for (Eigen::Index j = 0; j < u.size(); ++j) out += u[j] * basis_action[j];
  return out;
}

GateauxOperator gateaux_derivative(const FiniteKernel& kernel,
                                   const Eigen::VectorXd& theta_star,
                                   const Eigen::MatrixXd& ghat, const Eigen::VectorXd& pi,
                                   const GateauxOptions& opts) {
  if (ghat.rows() != kernel.n_states())
    throw std::invalid_argument("gateaux_derivative: ghat must have one row per state");
  if (pi.size() != kernel.n_states())
    throw std::invalid_argument("gateaux_derivative: pi must have one entry per state");
  if (!(opts.fd_step > 0))
    throw std::invalid_argument("gateaux_derivative: fd_step must be positive");

  const int d = static_cast<int>(theta_star.size());
  const double h = opts.fd_step * (1.0 + theta_star.norm());

  auto central = [&](int j, double step) {
    Eigen::VectorXd probe = theta_star;
    probe[j] = theta_star[j] + step;
    Eigen::MatrixXd plus = apply_kernel(kernel, probe, ghat);
    probe[j] = theta_star[j] - step;
    Eigen::MatrixXd minus = apply_kernel(kernel, probe, ghat);
    return Eigen::MatrixXd(((plus - minus) / (2.0 * step)).eval());
  };

  GateauxOperator op;
  op.fd_step_used = h;
  op.basis_action.reserve(d);
  double worst = 0.0;
  for (int j = 0; j < d; ++j) {
    Eigen::MatrixXd coarse = central(j, h);
    Eigen::MatrixXd fine = central(j, 0.5 * h);
    double disc = (fine - coarse).cwiseAbs().maxCoeff();
    worst = std::max(worst, disc);
    if (disc > 10.0 * opts.warn_tolerance) {
      std::ostringstream os;
      os << "gateaux_derivative: Richardson discrepancy " << disc
         << " in coordinate direction " << j << " suggests non-differentiability";
      op.warnings.push_back(os.str());
    }
    op.basis_action.push_back((4.0 * fine - coarse) / 3.0);
  }
  op.richardson_error = worst;

  op.lambda_bar.resize(d, d);
  for (int j = 0; j < d; ++j)
    op.lambda_bar.col(j) = (pi.transpose() * op.basis_action[j]).transpose();
  return op;
}

WDRemainderReport wd_remainder_scan(const FiniteKernel& kernel,
                                    const Eigen::VectorXd& theta_star,
                                    const Eigen::MatrixXd& ghat,
                                    const GateauxOperator& gateaux,
                                    const WDScanOptions& opts) {
  const int d = static_cast<int>(theta_star.size());
  std::vector<double> radii = opts.radii;
  if (radii.empty()) {
    // Geometric ladder 1e-1 .. 1e-4, three points per decade.
    for (int i = 0; i <= 9; ++i) radii.push_back(0.1 * std::pow(10.0, -i / 3.0));
  }
  for (double r : radii)
    if (!(r > 0)) throw std::invalid_argument("wd_remainder_scan: radii must be positive");

  // Coordinate directions (both signs) plus seeded random unit directions.
  std::vector<Eigen::VectorXd> dirs;
  for (int j = 0; j < d; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
    e[j] = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
  }
  RngStream rng = RngStream::split(opts.seed, 0x7764u);
  for (int i = 0; i < opts.n_random_directions; ++i) {
    Eigen::VectorXd u(d);
    for (int j = 0; j < d; ++j) u[j] = rng.gauss();
    double n = u.norm();
    if (n == 0) continue;
    u /= n;
    dirs.push_back(u);
  }

  Eigen::MatrixXd base = apply_kernel(kernel, theta_star, ghat);

  WDRemainderReport report;
  report.n_directions = static_cast<int>(dirs.size());
  report.radii = radii;
  report.sup_remainders.reserve(radii.size());
  double c_wd = 0.0;
  for (double r : radii) {
    double sup = 0.0;
    for (const auto& u : dirs) {
      Eigen::MatrixXd shifted = apply_kernel(kernel, theta_star + r * u, ghat);
      Eigen::MatrixXd remainder = shifted - base - r * gateaux.apply(u);
      sup = std::max(sup, remainder.cwiseAbs().maxCoeff());
    }
    report.sup_remainders.push_back(sup);
    c_wd = std::max(c_wd, sup / (r * r));
  }
  report.c_wd_hat = c_wd;

  double max_rem = 0.0;
  for (double s : report.sup_remainders) max_rem = std::max(max_rem, s);
  if (max_rem < 1e-14) {
    // Kernel response is exactly linear in theta (or theta-independent).
    report.exact_linear = true;
    report.fitted_exponent = 0.0;
    report.violation = false;
    return report;
  }

  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (report.sup_remainders[i] <= 0) continue;
    lx.push_back(std::log(radii[i]));
    ly.push_back(std::log(report.sup_remainders[i]));
  }
  if (lx.size() < 2)
    throw std::runtime_error("wd_remainder_scan: too few positive remainders to fit");
  LineFit fit = fit_line(lx, ly);
  report.fitted_exponent = fit.slope;
  report.violation = fit.slope < opts.violation_threshold;
  return report;
}

BiasOperator bias_operator(const Eigen::MatrixXd& lambda_bar, const Eigen::MatrixXd& jacobian,
                           double threshold) {
  if (lambda_bar.rows() != lambda_bar.cols() || jacobian.rows() != jacobian.cols() ||
      lambda_bar.rows() != jacobian.rows())
    throw std::invalid_argument("bias_operator: lambda_bar and jacobian must be d x d");
  BiasOperator out;
  out.matrix = lambda_bar + jacobian;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.matrix);
  out.min_singular_value = svd.singularValues().minCoeff();
  out.invertible = out.min_singular_value > threshold;
  return out;
}

}  // namespace salab
