#pragma once

#include <Eigen/Dense>
#include <vector>

#include "salab/kernels.hpp"
#include "salab/mean_field.hpp"

namespace salab {

// ---------------------------------------------------------------------------
// Poisson equation on a finite chain: (I - P) ghat = f - pi(f), pi(ghat) = 0.
// Columns of f (and ghat) are components of a vector-valued observable.
// ---------------------------------------------------------------------------

struct PoissonSolution {
  Eigen::MatrixXd values;          // n_states x d
  double centering_residual = 0.0; // |pi . ghat| (max over components)
  double equation_residual = 0.0;  // ||(I-P) ghat - (f - pi f)||_inf
  int series_depth = 0;            // 0 on the exact path
  double tail_bound = 0.0;         // geometric bound on the truncated series tail
};

// Fundamental-matrix solve: (I - P + 1 pi^T) ghat = f - pi(f).  One LU
// factorization is shared across the observable's components.
PoissonSolution poisson_solve_exact(const Eigen::MatrixXd& P, const Eigen::VectorXd& pi,
                                    const Eigen::MatrixXd& f);

// Truncated series sum_{t<depth} P^t (f - pi f).  rho_hat > 0 yields the tail
// bound (1-rho_hat)^depth ||f - pi f||_inf / rho_hat; rho_hat <= 0 leaves the
// bound at infinity.
PoissonSolution poisson_solve_series(const Eigen::MatrixXd& P, const Eigen::VectorXd& pi,
                                     const Eigen::MatrixXd& f, int depth,
                                     double rho_hat = 0.0);

// Exact one-step expectation (P_theta h) for a finite kernel; h is n_states x d.
Eigen::MatrixXd apply_kernel(const FiniteKernel& kernel, const Eigen::VectorXd& theta,
                             const Eigen::MatrixXd& h);

// Monte Carlo one-step expectation at a continuous state: mean over `budget`
// draws of h(X') with X' ~ P_theta(x, .).
template <class Kernel, class HFn>
auto apply_kernel_mc(const Kernel& kernel, const Eigen::VectorXd& theta,
                     const typename Kernel::State& x, HFn&& h, long long budget,
                     std::uint64_t seed) -> decltype(h(x)) {
  if (budget <= 0)
    throw std::invalid_argument("apply_kernel_mc: budget must be positive");
  RngStream stream = RngStream::split(seed, 0x616bu);
  typename Kernel::Workspace ws(kernel);
  std::vector<double> u(std::max(kernel.uniform_draws(), 1));
  std::vector<double> g(std::max(kernel.gauss_draws(), 1));
  StepDraws draws;
  draws.uniform = u.data();
  draws.gauss = g.data();
  auto acc = h(x);
  acc = acc - acc;  // zero of the right shape
  for (long long i = 0; i < budget; ++i) {
    stream.fill_uniform(u.data(), kernel.uniform_draws());
    stream.fill_gauss(g.data(), kernel.gauss_draws());
    acc = acc + h(kernel.advance(theta, x, draws, ws));
  }
  return acc * (1.0 / static_cast<double>(budget));
}

// Convenience: assemble f(x) = g(theta, x) as an n_states x d matrix.
Eigen::MatrixXd drift_table(const FiniteKernel& kernel, const FiniteMap& map,
                            const Eigen::VectorXd& theta);

}  // namespace salab
