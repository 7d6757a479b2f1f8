#include "salab/poisson.hpp"

#include <limits>
#include <stdexcept>

namespace salab {

namespace {

void check_shapes(const Eigen::MatrixXd& P, const Eigen::VectorXd& pi,
                  const Eigen::MatrixXd& f) {
  if (P.rows() != P.cols() || P.rows() < 2)
    throw std::invalid_argument("poisson: P must be square, n >= 2");
  if (pi.size() != P.rows())
    throw std::invalid_argument("poisson: pi dimension does not match P");
  if (f.rows() != P.rows() || f.cols() < 1)
    throw std::invalid_argument("poisson: f must have one row per state");
  double mass = pi.sum();
  if (std::abs(mass - 1.0) > 1e-10 || pi.minCoeff() < 0)
    throw std::invalid_argument("poisson: pi is not a probability vector");
}

Eigen::MatrixXd centered(const Eigen::VectorXd& pi, const Eigen::MatrixXd& f) {
  Eigen::RowVectorXd pif = pi.transpose() * f;
  return f - Eigen::VectorXd::Ones(f.rows()) * pif;
}

void fill_residuals(const Eigen::MatrixXd& P, const Eigen::VectorXd& pi,
                    const Eigen::MatrixXd& ftilde, PoissonSolution& sol) {
  sol.centering_residual = (pi.transpose() * sol.values).cwiseAbs().maxCoeff();
  Eigen::MatrixXd lhs = sol.values - P * sol.values;
  sol.equation_residual = (lhs - ftilde).cwiseAbs().maxCoeff();
}

}  // namespace

PoissonSolution poisson_solve_exact(const Eigen::MatrixXd& P, const Eigen::VectorXd& pi,
                                    const Eigen::MatrixXd& f) {
  check_shapes(P, pi, f);
  const int n = static_cast<int>(P.rows());
  Eigen::MatrixXd ftilde = centered(pi, f);
  Eigen::MatrixXd A =
      Eigen::MatrixXd::Identity(n, n) - P + Eigen::VectorXd::Ones(n) * pi.transpose();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);

  PoissonSolution sol;
  sol.values = lu.solve(ftilde);
  fill_residuals(P, pi, ftilde, sol);
  return sol;
}

PoissonSolution poisson_solve_series(const Eigen::MatrixXd& P, const Eigen::VectorXd& pi,
                                     const Eigen::MatrixXd& f, int depth, double rho_hat) {
  check_shapes(P, pi, f);
  if (depth < 1) throw std::invalid_argument("poisson_solve_series: depth must be >= 1");
  Eigen::MatrixXd ftilde = centered(pi, f);

  Eigen::MatrixXd term = ftilde;  // P^0 ftilde
  Eigen::MatrixXd sum = term;
  for (int t = 1; t < depth; ++t) {
    term = P * term;
    sum += term;
  }

  PoissonSolution sol;
  sol.values = std::move(sum);
  sol.series_depth = depth;
  if (rho_hat > 0 && rho_hat <= 1) {
    sol.tail_bound =
        std::pow(1.0 - rho_hat, depth) * ftilde.cwiseAbs().maxCoeff() / rho_hat;
  } else {
    sol.tail_bound = std::numeric_limits<double>::infinity();
  }
  fill_residuals(P, pi, ftilde, sol);
  return sol;
}

Eigen::MatrixXd apply_kernel(const FiniteKernel& kernel, const Eigen::VectorXd& theta,
                             const Eigen::MatrixXd& h) {
  if (h.rows() != kernel.n_states())
    throw std::invalid_argument("apply_kernel: h must have one row per state");
  return kernel.transition_matrix(theta) * h;
}

Eigen::MatrixXd drift_table(const FiniteKernel& kernel, const FiniteMap& map,
                            const Eigen::VectorXd& theta) {
  if (map.n_states() != kernel.n_states())
    throw std::invalid_argument("drift_table: map and kernel disagree on n_states");
  Eigen::MatrixXd f(kernel.n_states(), map.dim());
  Eigen::VectorXd gx(map.dim());
  for (int x = 0; x < kernel.n_states(); ++x) {
    map.eval_into(theta, x, gx);
    f.row(x) = gx.transpose();
  }
  return f;
}

}  // namespace salab
