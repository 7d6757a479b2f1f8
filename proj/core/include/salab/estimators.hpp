#pragma once

#include <Eigen/Dense>
#include <map>
#include <vector>

#include "salab/kernels.hpp"
#include "salab/mean_field.hpp"
#include "salab/stats.hpp"

namespace salab {

// ---------------------------------------------------------------------------
// Replica-level estimators and scaling fits.  Standard errors always come
// from variation across independent replicas, never from within-run samples,
// because iterates inside a run are strongly dependent.
// ---------------------------------------------------------------------------

struct BiasEstimate {
  Eigen::VectorXd bias;       // mean over replicas of the per-replica mean deviation
  Eigen::VectorXd std_error;  // per-component standard error across replicas
  int n_replicas = 0;
};

BiasEstimate bias_estimate(const std::vector<Eigen::VectorXd>& replica_means);

struct ScalingRow {
  double alpha = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  int n_replicas = 0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  double slope = 0.0;
  double slope_stderr = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Weighted log-log fit of estimate against alpha.  Weights come from relative
// standard errors; rows without standard errors fall back to equal weights.
ScalingReport loglog_slope(std::vector<ScalingRow> rows);

struct RRRow {
  double alpha = 0.0;
  Eigen::VectorXd value;      // 2 m(alpha) - m(2 alpha)
  Eigen::VectorXd std_error;  // sqrt(4 se(alpha)^2 + se(2 alpha)^2), componentwise
};

// Richardson-Romberg pairing: for every alpha whose doubled stepsize is also
// present, combine the two stationary means to cancel the first-order bias
// term.  Keys of `means` are stepsizes; values are (mean, standard error).
std::vector<RRRow> rr_extrapolate(
    const std::map<double, std::pair<Eigen::VectorXd, Eigen::VectorXd>>& means);

// ---------------------------------------------------------------------------
// Long-run covariance via truncated autocovariance sums.
// ---------------------------------------------------------------------------

struct GreenKuboEstimate {
  Eigen::MatrixXd sigma;          // variance_term + sum of symmetrized lags
  Eigen::MatrixXd variance_term;  // lag-0 covariance
  std::vector<Eigen::MatrixXd> lag_covariances;  // Gamma_k for k = 1..truncation_lag
  int truncation_lag = 0;
  bool plateau = false;  // partial sums stabilized before max_lag
};

// series: one row per time step, one column per component.  Requires at
// least 50 * max_lag rows.  Truncation stops early once the partial sums move
// by less than 1e-3 (relative) over five consecutive lags.
GreenKuboEstimate green_kubo(const Eigen::MatrixXd& series, int max_lag);

// ---------------------------------------------------------------------------
// CLT coverage for time-averaged observables.
// ---------------------------------------------------------------------------

struct CLTCoverage {
  double coverage = 0.0;
  double threshold = 0.0;  // chi-square quantile used for the ellipsoid
  int n_replicas = 0;
  int n_inside = 0;
  double nominal = 0.0;
};

// replica_means: one row per replica (time-averaged observable over
// steps_per_replica post-burn-in steps).  Coverage is the fraction of
// replicas whose standardized deviation from the grand mean falls inside the
// sigma-ellipsoid at the nominal level.  Requires >= 200 replicas.
CLTCoverage clt_coverage(const Eigen::MatrixXd& replica_means, long long steps_per_replica,
                         const Eigen::MatrixXd& sigma, double nominal = 0.95);

// ---------------------------------------------------------------------------
// Geometric decay fit for coupled-pair distances.
// ---------------------------------------------------------------------------

struct GeometricRateFit {
  double rate = 0.0;  // slope of log mean squared distance per step
  double r_squared = 0.0;
  int window = 0;     // number of leading steps used (pre-meeting)
};

GeometricRateFit geometric_rate_fit(const std::vector<double>& mean_sq_distance);

// ---------------------------------------------------------------------------
// First-order stationary bias decomposed into interpretable terms.
// ---------------------------------------------------------------------------

// One retained stationary transition: (theta_k, X_k, X_{k+1}).
struct StationaryTriple {
  Eigen::VectorXd theta;
  int x = 0;
  int x_next = 0;
};

struct TermStat {
  Eigen::VectorXd value;
  Eigen::VectorXd std_error;
};

struct BiasTermDecomposition {
  TermStat term_i;         // kernel-response term via the Poisson identity
  TermStat term_ii_fluct;  // Jacobian fluctuation E[(g'(theta*,X') - J*) Delta]
  TermStat term_iii;       // curvature term 0.5 E[g''(theta*,X')[Delta, Delta]]
  TermStat term_iv;        // third-order Taylor remainder
  Eigen::VectorXd bias_hat;
  Eigen::VectorXd bias_se;
  // (lambda_bar + J*) bias_hat + (I)' + (II)' + (III) + (IV); zero in
  // expectation at stationarity, so a large value flags estimator or
  // stationarity problems.
  Eigen::VectorXd residual;
  Eigen::VectorXd residual_se;  // replica-level standard error of the residual
  int n_replicas = 0;
  long long n_samples = 0;
  double fd_step_used = 0.0;
};

struct DecompositionInputs {
  Eigen::VectorXd theta_star;
  Eigen::MatrixXd jacobian;    // J* from the root certificate
  Eigen::MatrixXd ghat;        // Poisson solution at theta_star, n_states x d
  Eigen::MatrixXd lambda_bar;  // averaged kernel-response operator
  double fd_step = 1e-3;       // scaled by (1 + ||theta_star||)
};

// Samples are grouped by replica; replica-level means feed the standard
// errors.  Only finite-state kernels are supported because term (I) needs
// exact one-step expectations.
BiasTermDecomposition bias_term_decomposition(
    const FiniteKernel& kernel, const FiniteMap& map, const DecompositionInputs& inputs,
    const std::vector<std::vector<StationaryTriple>>& replica_samples);

}  // namespace salab
