#include "salab/kernels.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace salab {

namespace {

constexpr double kProbClamp = 1e-3;  // keeps parametric rows strictly ergodic

double clamp_prob(double p) {
  if (p < kProbClamp) return kProbClamp;
  if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
  return p;
}

Eigen::MatrixXd discrete_metric(int n) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(n, n);
  m.diagonal().setZero();
  return m;
}

void validate_metric(const Eigen::MatrixXd& m, int n) {
  if (m.rows() != n || m.cols() != n)
    throw std::invalid_argument("state_metric: dimension does not match n_states");
  for (int i = 0; i < n; ++i) {
    if (m(i, i) != 0.0) throw std::invalid_argument("state_metric: diagonal must be zero");
    for (int j = 0; j < n; ++j) {
      if (m(i, j) < 0) throw std::invalid_argument("state_metric: entries must be nonnegative");
      if (std::abs(m(i, j) - m(j, i)) > 0)
        throw std::invalid_argument("state_metric: must be symmetric");
      for (int k = 0; k < n; ++k)
        if (m(i, j) > m(i, k) + m(k, j) + 1e-15)
          throw std::invalid_argument("state_metric: triangle inequality violated");
    }
  }
}

}  // namespace

FiniteKernel::FiniteKernel(int n_states, RowFn rows, Eigen::MatrixXd state_metric)
    : n_(n_states), rows_(std::move(rows)) {
  if (n_ < 2) throw std::invalid_argument("FiniteKernel: n_states must be >= 2");
  if (!rows_) throw std::invalid_argument("FiniteKernel: row function must be set");
  if (state_metric.size() == 0) {
    metric_ = discrete_metric(n_);
  } else {
    validate_metric(state_metric, n_);
    metric_ = std::move(state_metric);
  }
}

FiniteKernel FiniteKernel::finite2(const Finite2Params& p) {
  if (!(p.a0 > 0.0 && p.a0 < 1.0))
    throw std::invalid_argument("finite2.a0: must lie strictly inside (0,1)");
  if (!(p.b0 > 0.0 && p.b0 < 1.0))
    throw std::invalid_argument("finite2.b0: must lie strictly inside (0,1)");
  if (p.a1 < 0 || p.b1 < 0)
    throw std::invalid_argument("finite2.a1/b1: drive amplitudes must be nonnegative");
  // The row function is never consulted on the builtin path; row_into and
  // advance branch on builtin2_ before touching it.
  FiniteKernel k(2, [](const Eigen::VectorXd&, int, double*) {});
  k.builtin2_ = true;
  k.p2_ = p;
  return k;
}

FiniteKernel FiniteKernel::from_matrix(const Eigen::MatrixXd& P, Eigen::MatrixXd state_metric) {
  if (P.rows() != P.cols() || P.rows() < 2)
    throw std::invalid_argument("FiniteKernel::from_matrix: P must be square, n >= 2");
  Eigen::MatrixXd copy = P;
  return FiniteKernel(static_cast<int>(P.rows()),
                      [copy](const Eigen::VectorXd&, int x, double* row) {
                        for (int j = 0; j < copy.cols(); ++j) row[j] = copy(x, j);
                      },
                      std::move(state_metric));
}

void FiniteKernel::finite2_row(double theta, int x, double* row) const {
  double t = theta - p2_.theta_ref;
  double drive = p2_.abs_drive ? std::abs(t) : std::tanh(t);
  if (x == 0) {
    double a = clamp_prob(p2_.a0 + p2_.a1 * drive);
    row[0] = 1.0 - a;
    row[1] = a;
  } else {
    double b = clamp_prob(p2_.b0 - p2_.b1 * drive);
    row[0] = b;
    row[1] = 1.0 - b;
  }
}

void FiniteKernel::row_into(const Eigen::VectorXd& theta, int x, double* row) const {
  if (x < 0 || x >= n_) throw std::invalid_argument("FiniteKernel: state index out of range");
  if (theta.size() < 1 || !theta.allFinite())
    throw std::invalid_argument("FiniteKernel: theta must be finite and nonempty");
  if (builtin2_) {
    finite2_row(theta[0], x, row);
    return;
  }
  rows_(theta, x, row);
  double sum = 0.0;
  for (int j = 0; j < n_; ++j) {
    if (!(row[j] >= 0.0))
      throw std::invalid_argument("FiniteKernel: row has a negative or NaN probability");
    sum += row[j];
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "FiniteKernel: row " << x << " sums to " << sum << ", expected 1 within 1e-12";
    throw std::invalid_argument(os.str());
  }
}

Eigen::MatrixXd FiniteKernel::transition_matrix(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd P(n_, n_);
  std::vector<double> row(n_);
  for (int x = 0; x < n_; ++x) {
    row_into(theta, x, row.data());
    double sum = 0.0;
    for (int j = 0; j < n_; ++j) sum += row[j];
    // row_into already guarantees |sum-1| <= 1e-12; renormalize the drift away
    for (int j = 0; j < n_; ++j) P(x, j) = row[j] / sum;
  }
  return P;
}

FiniteKernel::State FiniteKernel::advance(const Eigen::VectorXd& theta, State x,
                                          const StepDraws& d, Workspace& ws) const {
  if (builtin2_) {
    // Hot path: same inverse-CDF rule as the generic scan below, evaluated
    // without materializing the row.  Keeping the threshold identical (first
    // row entry) matters: it makes builtin and matrix-backed kernels produce
    // identical paths from identical draws, and it realizes the maximal
    // two-state coupling under common uniforms.
    double t = theta[0] - p2_.theta_ref;
    double drive = p2_.abs_drive ? std::abs(t) : std::tanh(t);
    if (x == 0) {
      double a = clamp_prob(p2_.a0 + p2_.a1 * drive);
      return d.uniform[0] < 1.0 - a ? 0 : 1;
    }
    double b = clamp_prob(p2_.b0 - p2_.b1 * drive);
    return d.uniform[0] < b ? 0 : 1;
  }
  row_into(theta, x, ws.row.data());
  double u = d.uniform[0];
  double acc = 0.0;
  for (int j = 0; j < n_; ++j) {
    acc += ws.row[j];
    if (u < acc) return j;
  }
  return n_ - 1;
}

FiniteKernel::State FiniteKernel::random_state(const Eigen::VectorXd&, RngStream& rng) const {
  return static_cast<int>(rng.uniform() * n_) % n_;
}

ClippedARKernel::ClippedARKernel(double ar_coeff, ThetaFn mean_shift, ThetaFn noise_scale,
                                 double clip)
    : ar_(ar_coeff), mean_(std::move(mean_shift)), scale_(std::move(noise_scale)), clip_(clip) {
  if (!(std::abs(ar_) < 1.0))
    throw std::invalid_argument("clipped_ar.ar_coeff: must satisfy |coeff| < 1");
  if (!(clip_ > 0)) throw std::invalid_argument("clipped_ar.clip: must be positive");
  if (!mean_ || !scale_)
    throw std::invalid_argument("clipped_ar: mean_shift and noise_scale must be set");
}

ClippedARKernel::State ClippedARKernel::advance(const Eigen::VectorXd& theta, State x,
                                                const StepDraws& d, Workspace&) const {
  double sigma = scale_(theta);
  if (!(sigma >= 0))
    throw std::invalid_argument("clipped_ar.noise_scale: returned a negative or NaN value");
  double y = ar_ * x + mean_(theta) + sigma * d.gauss[0];
  if (y > clip_) return clip_;
  if (y < -clip_) return -clip_;
  return y;
}

ProjectedLangevinKernel::ProjectedLangevinKernel(double step_size, GradFn grad_u,
                                                 Eigen::VectorXd box_lo, Eigen::VectorXd box_hi)
    : eta_(step_size), grad_u_(std::move(grad_u)), lo_(std::move(box_lo)), hi_(std::move(box_hi)) {
  if (!(eta_ > 0)) throw std::invalid_argument("proj_langevin.step_size: must be positive");
  if (lo_.size() != hi_.size() || lo_.size() == 0)
    throw std::invalid_argument("proj_langevin.box: bounds must be nonempty and match");
  for (int i = 0; i < lo_.size(); ++i)
    if (!(lo_[i] < hi_[i]))
      throw std::invalid_argument("proj_langevin.box: lower bound must be below upper bound");
  if (!grad_u_) throw std::invalid_argument("proj_langevin.grad_u: must be set");
}

void ProjectedLangevinKernel::advance_into(const Eigen::VectorXd& theta, const State& x,
                                           const StepDraws& d, Workspace& ws,
                                           State& out) const {
  grad_u_(x, theta, ws.grad);
  double diffusion = std::sqrt(2.0 * eta_);
  for (int i = 0; i < lo_.size(); ++i) {
    double y = x[i] - eta_ * ws.grad[i] + diffusion * d.gauss[i];
    out[i] = std::min(hi_[i], std::max(lo_[i], y));
  }
}

ProjectedLangevinKernel::State ProjectedLangevinKernel::random_state(const Eigen::VectorXd&,
                                                                     RngStream& rng) const {
  State x(dim());
  for (int i = 0; i < dim(); ++i) x[i] = lo_[i] + (hi_[i] - lo_[i]) * rng.uniform();
  return x;
}

MHKernel::MHKernel(PotentialFn potential, double proposal_sigma)
    : u_(std::move(potential)), sigma_q_(proposal_sigma) {
  if (!(sigma_q_ > 0)) throw std::invalid_argument("rw_mh.proposal_sigma: must be positive");
  if (!u_) throw std::invalid_argument("rw_mh.potential: must be set");
}

MHKernel::State MHKernel::advance(const Eigen::VectorXd& theta, State x, const StepDraws& d,
                                  Workspace&) const {
  double y = x + sigma_q_ * d.gauss[0];
  double log_ratio = u_(x, theta) - u_(y, theta);
  if (std::isnan(log_ratio))
    throw std::invalid_argument("rw_mh.potential: returned NaN");
  // Accept with probability min(1, exp(log_ratio)); the uniform is consumed
  // on both branches so coupled chains stay draw-aligned.
  if (std::log(d.uniform[0]) < log_ratio) return y;
  return x;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P, double residual_tol) {
  if (P.rows() != P.cols() || P.rows() < 2)
    throw std::invalid_argument("stationary_distribution: P must be square, n >= 2");
  const int n = static_cast<int>(P.rows());

  Eigen::MatrixXd Pn = P;
  for (int k = 1; k < n; ++k) Pn = Pn * P;
  if ((Pn.array() <= 0.0).any())
    throw std::runtime_error(
        "stationary_distribution: chain failed the ergodicity check (P^n has a zero entry)");

  // Balance equations (P^T - I) pi = 0 with the last equation replaced by
  // the normalization sum(pi) = 1.
  Eigen::MatrixXd A = P.transpose() - Eigen::MatrixXd::Identity(n, n);
  A.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs[n - 1] = 1.0;
  Eigen::VectorXd pi = A.partialPivLu().solve(rhs);

  double residual = (P.transpose() * pi - pi).cwiseAbs().maxCoeff();
  if (!(residual <= residual_tol)) {
    std::ostringstream os;
    os << "stationary_distribution: balance residual " << residual << " exceeds " << residual_tol;
    throw std::runtime_error(os.str());
  }
  return pi;
}

}  // namespace salab
