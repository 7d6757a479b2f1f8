#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "salab/rng.hpp"

namespace salab {

// ---------------------------------------------------------------------------
// Controlled Markov kernel families P_theta.  Kernels are immutable after
// construction and hold no generator state: sampling consumes draws passed in
// explicitly, which is what makes common-random-number coupling and replay
// possible.
// ---------------------------------------------------------------------------

// Parametric two-state family.  Row x=0 is (1-a, a), row x=1 is (b, 1-b),
// where a and b respond to theta through a bounded drive:
//   a(theta) = clamp(a0 + a1 * phi(theta - theta_ref))
//   b(theta) = clamp(b0 - b1 * phi(theta - theta_ref))
// phi is tanh for the smooth family or |.| for the kink control used to
// exercise the quadratic-remainder scan on a non-differentiable point.
struct Finite2Params {
  double a0 = 0.5;
  double a1 = 0.2;
  double b0 = 0.5;
  double b1 = 0.2;
  double theta_ref = 0.0;
  bool abs_drive = false;  // false: tanh drive, true: |.| drive
};

class FiniteKernel {
 public:
  using State = int;
  // Writes row x of P_theta into row[0..n_states).
  using RowFn = std::function<void(const Eigen::VectorXd&, int, double*)>;

  struct Workspace {
    std::vector<double> row;
    explicit Workspace(const FiniteKernel& k) : row(k.n_states()) {}
  };

  FiniteKernel(int n_states, RowFn rows, Eigen::MatrixXd state_metric = Eigen::MatrixXd());
  static FiniteKernel finite2(const Finite2Params& p);
  // Constant kernel (no theta dependence), used for controls and tests.
  static FiniteKernel from_matrix(const Eigen::MatrixXd& P,
                                  Eigen::MatrixXd state_metric = Eigen::MatrixXd());

  int n_states() const { return n_; }
  int param_dim_hint() const { return 1; }
  int uniform_draws() const { return 1; }
  int gauss_draws() const { return 0; }

  // Row x of P_theta; validates nonnegativity and row sum within 1e-12.
  void row_into(const Eigen::VectorXd& theta, int x, double* row) const;

  // Full matrix with the same validation applied row-wise.
  Eigen::MatrixXd transition_matrix(const Eigen::VectorXd& theta) const;

  // Inverse-CDF transition using draws.uniform[0].
  State advance(const Eigen::VectorXd& theta, State x, const StepDraws& d,
                Workspace& ws) const;

  State random_state(const Eigen::VectorXd& theta, RngStream& rng) const;
  double state_distance(State x, State y) const { return metric_(x, y); }
  const Eigen::MatrixXd& state_metric() const { return metric_; }

  bool is_finite2() const { return builtin2_; }
  const Finite2Params& finite2_params() const { return p2_; }

 private:
  int n_;
  RowFn rows_;
  Eigen::MatrixXd metric_;
  bool builtin2_ = false;
  Finite2Params p2_;

  void finite2_row(double theta, int x, double* row) const;
};

// Scalar autoregression with hard clipping to [-clip, clip]:
//   X' = clip(ar_coeff * X + mean_shift(theta) + noise_scale(theta) * Z).
class ClippedARKernel {
 public:
  using State = double;
  using ThetaFn = std::function<double(const Eigen::VectorXd&)>;

  struct Workspace {
    explicit Workspace(const ClippedARKernel&) {}
  };

  ClippedARKernel(double ar_coeff, ThetaFn mean_shift, ThetaFn noise_scale, double clip);

  int uniform_draws() const { return 0; }
  int gauss_draws() const { return 1; }

  State advance(const Eigen::VectorXd& theta, State x, const StepDraws& d,
                Workspace&) const;

  State random_state(const Eigen::VectorXd&, RngStream& rng) const {
    return clip_ * (2.0 * rng.uniform() - 1.0);
  }
  double state_distance(State x, State y) const { return std::abs(x - y); }

  double ar_coeff() const { return ar_; }
  double clip() const { return clip_; }

 private:
  double ar_;
  ThetaFn mean_;
  ThetaFn scale_;
  double clip_;
};

// Euler discretization of Langevin dynamics for potential U(.; theta),
// projected onto an axis-aligned box after every step:
//   X' = proj_box(X - step_size * grad_u(X, theta) + sqrt(2 step_size) Z).
class ProjectedLangevinKernel {
 public:
  using State = Eigen::VectorXd;
  using GradFn = std::function<void(const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                                    Eigen::VectorXd& grad_out)>;

  struct Workspace {
    Eigen::VectorXd grad;
    explicit Workspace(const ProjectedLangevinKernel& k) : grad(k.dim()) {}
  };

  ProjectedLangevinKernel(double step_size, GradFn grad_u, Eigen::VectorXd box_lo,
                          Eigen::VectorXd box_hi);

  int dim() const { return static_cast<int>(lo_.size()); }
  int uniform_draws() const { return 0; }
  int gauss_draws() const { return dim(); }

  void advance_into(const Eigen::VectorXd& theta, const State& x, const StepDraws& d,
                    Workspace& ws, State& out) const;
  State advance(const Eigen::VectorXd& theta, const State& x, const StepDraws& d,
                Workspace& ws) const {
    State out(dim());
    advance_into(theta, x, d, ws, out);
    return out;
  }

  State random_state(const Eigen::VectorXd&, RngStream& rng) const;
  double state_distance(const State& x, const State& y) const { return (x - y).norm(); }

 private:
  double eta_;
  GradFn grad_u_;
  Eigen::VectorXd lo_, hi_;
};

// Random-walk Metropolis-Hastings targeting pi_theta(x) proportional to
// exp(-U(x; theta)) on the real line.  Every step consumes one Gaussian
// (proposal) and one uniform (acceptance) so coupled chains stay aligned.
class MHKernel {
 public:
  using State = double;
  using PotentialFn = std::function<double(double x, const Eigen::VectorXd& theta)>;

  struct Workspace {
    explicit Workspace(const MHKernel&) {}
  };

  MHKernel(PotentialFn potential, double proposal_sigma);

  int uniform_draws() const { return 1; }
  int gauss_draws() const { return 1; }

  State advance(const Eigen::VectorXd& theta, State x, const StepDraws& d,
                Workspace&) const;

  State random_state(const Eigen::VectorXd&, RngStream& rng) const { return rng.gauss(); }
  double state_distance(State x, State y) const { return std::abs(x - y); }

  double proposal_sigma() const { return sigma_q_; }

 private:
  PotentialFn u_;
  double sigma_q_;
};

// ---------------------------------------------------------------------------
// Finite-chain linear algebra.
// ---------------------------------------------------------------------------

// Unique stationary distribution of an ergodic row-stochastic matrix.
// Ergodicity is checked through strict positivity of P^n (n = number of
// states); the linear system is the balance equations with one row replaced
// by the normalization constraint.  Throws if the chain fails the ergodicity
// check or the residual ||pi^T P - pi^T||_inf exceeds residual_tol.
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P,
                                        double residual_tol = 1e-12);

// ---------------------------------------------------------------------------
// Empirical kernel diagnostics via synchronous (common-draw) coupling.
// ---------------------------------------------------------------------------

struct KernelDiagnostics {
  double rho_hat = 0.0;   // 1 - worst observed one-step contraction ratio
  double lp_hat = 0.0;    // worst observed theta-sensitivity ratio
  int n_pairs = 0;
  double ci_width = 0.0;  // standard error of the mean ratio across pairs
};

namespace detail {

template <class Kernel>
double coupled_sq_distance(const Kernel& kernel, const Eigen::VectorXd& theta_a,
                           const Eigen::VectorXd& theta_b,
                           const typename Kernel::State& xa,
                           const typename Kernel::State& xb, int n_inner,
                           RngStream& rng) {
  typename Kernel::Workspace ws(kernel);
  std::vector<double> u(std::max(kernel.uniform_draws(), 1));
  std::vector<double> g(std::max(kernel.gauss_draws(), 1));
  StepDraws d;
  d.uniform = u.data();
  d.gauss = g.data();
  double sum = 0.0;
  for (int i = 0; i < n_inner; ++i) {
    rng.fill_uniform(u.data(), kernel.uniform_draws());
    rng.fill_gauss(g.data(), kernel.gauss_draws());
    auto ya = kernel.advance(theta_a, xa, d, ws);
    auto yb = kernel.advance(theta_b, xb, d, ws);
    double dist = kernel.state_distance(ya, yb);
    sum += dist * dist;
  }
  return sum / n_inner;
}

}  // namespace detail

// One-step contraction estimate at fixed theta: for sampled state pairs
// (x, x'), the coupled mean-square one-step distance is compared with
// d(x, x')^2, and rho_hat = 1 - max ratio.  rho_hat = 1 means the coupling
// collapses in one step; rho_hat <= 0 means no contraction was observed.
template <class Kernel>
KernelDiagnostics estimate_contraction(const Kernel& kernel, const Eigen::VectorXd& theta,
                                       int n_pairs, int n_inner, std::uint64_t seed) {
  if (n_pairs < 1 || n_inner < 1)
    throw std::invalid_argument("estimate_contraction: n_pairs and n_inner must be >= 1");
  RngStream rng = RngStream::split(seed, 0x7061u);
  double worst = 0.0;
  double sum_ratio = 0.0, sum_ratio2 = 0.0;
  int used = 0;
  for (int p = 0; p < n_pairs; ++p) {
    auto xa = kernel.random_state(theta, rng);
    auto xb = kernel.random_state(theta, rng);
    double d0 = kernel.state_distance(xa, xb);
    if (d0 <= 0) continue;
    double msd = detail::coupled_sq_distance(kernel, theta, theta, xa, xb, n_inner, rng);
    double ratio = std::sqrt(msd) / d0;
    worst = std::max(worst, ratio);
    sum_ratio += ratio;
    sum_ratio2 += ratio * ratio;
    ++used;
  }
  if (used == 0)
    throw std::runtime_error("estimate_contraction: no state pairs with positive distance");
  KernelDiagnostics out;
  out.n_pairs = used;
  out.rho_hat = 1.0 - worst;
  double mean = sum_ratio / used;
  double var = std::max(0.0, sum_ratio2 / used - mean * mean);
  out.ci_width = used > 1 ? std::sqrt(var / (used - 1)) : 0.0;
  return out;
}

// Theta-sensitivity estimate: coupled mean-square distance between one draw
// from P_theta(x,.) and one from P_theta'(x,.) under common randomness,
// normalized by ||theta - theta'||.
template <class Kernel>
KernelDiagnostics estimate_sensitivity(const Kernel& kernel, const Eigen::VectorXd& theta_a,
                                       const Eigen::VectorXd& theta_b, int n_pairs,
                                       int n_inner, std::uint64_t seed) {
  double dtheta = (theta_a - theta_b).norm();
  if (!(dtheta > 0))
    throw std::invalid_argument("estimate_sensitivity: theta points must differ");
  if (n_pairs < 1 || n_inner < 1)
    throw std::invalid_argument("estimate_sensitivity: n_pairs and n_inner must be >= 1");
  RngStream rng = RngStream::split(seed, 0x7365u);
  double worst = 0.0;
  double sum_ratio = 0.0, sum_ratio2 = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    auto x = kernel.random_state(theta_a, rng);
    double msd =
        detail::coupled_sq_distance(kernel, theta_a, theta_b, x, x, n_inner, rng);
    double ratio = std::sqrt(msd) / dtheta;
    worst = std::max(worst, ratio);
    sum_ratio += ratio;
    sum_ratio2 += ratio * ratio;
  }
  KernelDiagnostics out;
  out.n_pairs = n_pairs;
  out.lp_hat = worst;
  double mean = sum_ratio / n_pairs;
  double var = std::max(0.0, sum_ratio2 / n_pairs - mean * mean);
  out.ci_width = n_pairs > 1 ? std::sqrt(var / (n_pairs - 1)) : 0.0;
  return out;
}

}  // namespace salab
