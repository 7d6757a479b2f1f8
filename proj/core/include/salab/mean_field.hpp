#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "salab/kernels.hpp"
#include "salab/rng.hpp"

namespace salab {

// ---------------------------------------------------------------------------
// Update maps g(theta, x) and the mean field gbar(theta) = E_{pi_theta}[g].
// ---------------------------------------------------------------------------

// Map over a finite state space.  One class covers the registered forms:
//   linear_hx:  g(theta, x) = A theta + h[x]           (A defaults to -I)
//   tanh_mix:   g(theta, x) = -theta - c tanh(theta - center) + h[x]   (d = 1)
//   table:      g(theta, x) interpolated linearly in theta from a grid (d = 1)
class FiniteMap {
 public:
  static FiniteMap linear_hx(Eigen::MatrixXd h_table);  // n_states x d
  static FiniteMap linear_general(Eigen::MatrixXd a, Eigen::MatrixXd h_table);
  static FiniteMap tanh_mix(Eigen::VectorXd h_table, double mix_coeff, double mix_center);
  static FiniteMap table(Eigen::VectorXd theta_grid, Eigen::MatrixXd values);

  int dim() const { return dim_; }
  int n_states() const { return n_states_; }

  void eval_into(const Eigen::VectorXd& theta, int x, Eigen::VectorXd& out) const {
    if (tabular_) {
      out[0] = table_lookup(theta[0], x);
      return;
    }
    out.noalias() = a_ * theta;
    out += h_.row(x).transpose();
    if (mix_coeff_ != 0.0) out[0] -= mix_coeff_ * std::tanh(theta[0] - mix_center_);
  }

  Eigen::VectorXd eval(const Eigen::VectorXd& theta, int x) const {
    Eigen::VectorXd out(dim_);
    eval_into(theta, x, out);
    return out;
  }

 private:
  FiniteMap() = default;
  double table_lookup(double theta, int x) const;

  int dim_ = 0;
  int n_states_ = 0;
  Eigen::MatrixXd a_;      // d x d linear part
  Eigen::MatrixXd h_;      // n_states x d state contribution
  double mix_coeff_ = 0.0;
  double mix_center_ = 0.0;
  bool tabular_ = false;
  Eigen::VectorXd grid_;   // table mode: ascending theta grid
  Eigen::MatrixXd values_; // table mode: n_grid x n_states
};

// Map over a scalar continuous state (clipped AR, random-walk MH):
//   g(theta, x) = -theta - c tanh(theta_0 - center) e_0 + coeff * x.
class ScalarStateMap {
 public:
  explicit ScalarStateMap(Eigen::VectorXd coeff, double mix_coeff = 0.0,
                          double mix_center = 0.0)
      : coeff_(std::move(coeff)), mix_coeff_(mix_coeff), mix_center_(mix_center) {
    if (coeff_.size() < 1)
      throw std::invalid_argument("ScalarStateMap: coeff must be nonempty");
  }

  int dim() const { return static_cast<int>(coeff_.size()); }

  void eval_into(const Eigen::VectorXd& theta, double x, Eigen::VectorXd& out) const {
    out = -theta;
    out += coeff_ * x;
    if (mix_coeff_ != 0.0) out[0] -= mix_coeff_ * std::tanh(theta[0] - mix_center_);
  }

 private:
  Eigen::VectorXd coeff_;
  double mix_coeff_;
  double mix_center_;
};

// Map over a vector continuous state: g(theta, x) = -theta + H x.
class VectorStateMap {
 public:
  explicit VectorStateMap(Eigen::MatrixXd h) : h_(std::move(h)) {
    if (h_.rows() < 1 || h_.cols() < 1)
      throw std::invalid_argument("VectorStateMap: H must be nonempty");
  }

  int dim() const { return static_cast<int>(h_.rows()); }

  void eval_into(const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
                 Eigen::VectorXd& out) const {
    out = -theta;
    out.noalias() += h_ * x;
  }

 private:
  Eigen::MatrixXd h_;
};

// ---------------------------------------------------------------------------
// Mean-field evaluation, root finding, and local geometry.
// ---------------------------------------------------------------------------

struct MeanFieldValue {
  Eigen::VectorXd value;
  double std_error = 0.0;  // zero on the exact path
  bool exact = false;
};

enum class RootMethod { exact_finite, monte_carlo };

struct RootCertificate {
  Eigen::VectorXd theta_star;
  double residual = 0.0;       // ||gbar(theta_star)||
  Eigen::MatrixXd jacobian;    // d x d derivative of gbar at theta_star
  double jacobian_error = 0.0; // Richardson discrepancy of the FD Jacobian
  RootMethod method = RootMethod::exact_finite;
};

struct LipschitzHints {
  std::optional<double> l1;  // Lipschitz constant of gbar
  std::optional<double> mu;  // strong monotonicity constant
};

struct RootOptions {
  double tol = 1e-10;
  int max_iter = 10000;
  double fd_step = 1e-4;  // scaled by (1 + ||theta_star||) in jacobian_at
};

// Exact mean field for finite chains: gbar(theta) = sum_x pi_theta(x) g(theta, x).
MeanFieldValue mean_field_eval(const FiniteKernel& kernel, const FiniteMap& map,
                               const Eigen::VectorXd& theta);

// Long-run-average mean field for continuous-state kernels.  The chain is run
// at frozen theta; the returned std_error is a batch-means estimate.  A fixed
// stream seed makes the empirical mean field a deterministic function of
// theta, which keeps finite differences through it meaningful.
template <class Kernel, class Map>
MeanFieldValue mean_field_eval_mc(const Kernel& kernel, const Map& map,
                                  const Eigen::VectorXd& theta, long long budget,
                                  long long burn_in, std::uint64_t seed) {
  if (budget <= 0)
    throw std::invalid_argument("mean_field_eval_mc: budget must be positive");
  if (burn_in < 0 || burn_in >= budget)
    throw std::invalid_argument("mean_field_eval_mc: need 0 <= burn_in < budget");

  RngStream stream = RngStream::split(seed, 0x6d66u);
  typename Kernel::Workspace ws(kernel);
  std::vector<double> u(std::max(kernel.uniform_draws(), 1));
  std::vector<double> g(std::max(kernel.gauss_draws(), 1));
  StepDraws draws;
  draws.uniform = u.data();
  draws.gauss = g.data();

  auto x = kernel.random_state(theta, stream);
  const int d = static_cast<int>(theta.size());
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd gval(d);

  // 16 batches for the batch-means standard error.
  const int n_batches = 16;
  long long n_keep = budget - burn_in;
  std::vector<Eigen::VectorXd> batch(n_batches, Eigen::VectorXd::Zero(d));
  std::vector<long long> batch_count(n_batches, 0);

  for (long long k = 0; k < budget; ++k) {
    stream.fill_uniform(u.data(), kernel.uniform_draws());
    stream.fill_gauss(g.data(), kernel.gauss_draws());
    x = kernel.advance(theta, x, draws, ws);
    if (k < burn_in) continue;
    map.eval_into(theta, x, gval);
    acc += gval;
    int b = static_cast<int>(((k - burn_in) * n_batches) / n_keep);
    batch[b] += gval;
    ++batch_count[b];
  }

  MeanFieldValue out;
  out.value = acc / static_cast<double>(n_keep);
  out.exact = false;
  double var = 0.0;
  int used = 0;
  for (int b = 0; b < n_batches; ++b) {
    if (batch_count[b] == 0) continue;
    double diff = (batch[b] / static_cast<double>(batch_count[b]) - out.value).norm();
    var += diff * diff;
    ++used;
  }
  out.std_error = used > 1 ? std::sqrt(var / (used * (used - 1))) : 0.0;
  return out;
}

// Damped iteration theta <- theta + eta gbar(theta) on the exact mean field.
// eta comes from hints (mu / L1^2) when available, otherwise backtracking.
RootCertificate find_root(const FiniteKernel& kernel, const FiniteMap& map,
                          const Eigen::VectorXd& theta0, const LipschitzHints& hints = {},
                          const RootOptions& opts = {});

// Central finite differences of the exact mean field with one Richardson
// extrapolation level.  Step = fd_step * (1 + ||theta||).
struct JacobianResult {
  Eigen::MatrixXd jacobian;
  double richardson_error = 0.0;
  double fd_step_used = 0.0;
};
JacobianResult jacobian_at(const FiniteKernel& kernel, const FiniteMap& map,
                           const Eigen::VectorXd& theta, double fd_step = 1e-4);

// Grid diagnostic over [lo, hi]^d: worst-pair strong monotonicity constant and
// Lipschitz constant of the exact mean field.  d = 1 uses a uniform grid;
// higher dimensions draw seeded uniform points.
struct MonotonicityScan {
  double mu_hat = 0.0;
  double l1_hat = 0.0;
  int n_points = 0;
};
MonotonicityScan monotonicity_scan(const FiniteKernel& kernel, const FiniteMap& map,
                                   double lo, double hi, int n_points,
                                   std::uint64_t seed = 0);

}  // namespace salab
