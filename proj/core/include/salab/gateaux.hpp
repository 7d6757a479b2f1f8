#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "salab/kernels.hpp"
#include "salab/poisson.hpp"

namespace salab {

// ---------------------------------------------------------------------------
// Directional derivative of theta -> P_theta ghat at theta_star, the averaged
// operator Lambda_bar, and the quadratic-remainder scan that checks whether
// the kernel family is differentiable enough for first-order bias analysis.
// ---------------------------------------------------------------------------

struct GateauxOperator {
  // basis_action[j] is the n_states x d matrix x -> d/dt (P_{theta+t e_j} ghat)(x).
  std::vector<Eigen::MatrixXd> basis_action;
  Eigen::MatrixXd lambda_bar;  // d x d: column j = sum_x pi(x) basis_action[j](x,:)
  double fd_step_used = 0.0;
  double richardson_error = 0.0;
  std::vector<std::string> warnings;

  // Action on an arbitrary direction by linearity: sum_j u_j basis_action[j].
  Eigen::MatrixXd apply(const Eigen::VectorXd& u) const;
};

struct GateauxOptions {
  double fd_step = 1e-3;        // coarse step; the fine step is half of it
  double warn_tolerance = 1e-6; // Richardson error above 10x this flags a warning
};

// Central differences of t -> P_{theta_star + t e_j} ghat with one Richardson
// level, evaluated exactly on a finite kernel.  ghat is n_states x d (the
// Poisson solution at theta_star); pi is the stationary law at theta_star.
GateauxOperator gateaux_derivative(const FiniteKernel& kernel,
                                   const Eigen::VectorXd& theta_star,
                                   const Eigen::MatrixXd& ghat, const Eigen::VectorXd& pi,
                                   const GateauxOptions& opts = {});

// Remainder scan: sup over directions and states of
//   || (P_{theta*+r u} - P_{theta*}) ghat (x) - r Lambda[u](x) ||_inf
// at each radius, with a log-log exponent fit.  Exponent near 2 certifies a
// quadratic remainder; below violation_threshold the flag is raised (a kink
// in the kernel family shows up as exponent near 1).
struct WDRemainderReport {
  std::vector<double> radii;
  std::vector<double> sup_remainders;
  double fitted_exponent = 0.0;
  double c_wd_hat = 0.0;  // max over radii of remainder / radius^2
  bool violation = false;
  bool exact_linear = false;  // all remainders at floating-point zero
  int n_directions = 0;
};

struct WDScanOptions {
  std::vector<double> radii;  // default: geometric from 1e-1 down to 1e-4
  int n_random_directions = 8;
  std::uint64_t seed = 0;
  double violation_threshold = 1.5;
};

WDRemainderReport wd_remainder_scan(const FiniteKernel& kernel,
                                    const Eigen::VectorXd& theta_star,
                                    const Eigen::MatrixXd& ghat,
                                    const GateauxOperator& gateaux,
                                    const WDScanOptions& opts = {});

// The matrix driving the first-order bias equation, with an invertibility
// certificate from its smallest singular value.
struct BiasOperator {
  Eigen::MatrixXd matrix;  // lambda_bar + jacobian
  double min_singular_value = 0.0;
  bool invertible = false;
};

BiasOperator bias_operator(const Eigen::MatrixXd& lambda_bar, const Eigen::MatrixXd& jacobian,
                           double threshold = 1e-8);

}  // namespace salab
