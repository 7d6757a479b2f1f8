#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "salab/rng.hpp"

namespace salab {

// ---------------------------------------------------------------------------
// Constant-stepsize stochastic approximation driven by a controlled kernel:
// sample X' ~ P_theta(x, .), then theta' = theta + alpha (g(theta, X') + xi).
// ---------------------------------------------------------------------------

enum class NoiseKind { none, gaussian, theta_scaled };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double scale = 0.0;  // sigma for gaussian; xi = scale*(1+||theta||)*Z when theta_scaled
};

struct SAConfig {
  double alpha = 0.0;
  long long n_steps = 0;   // total steps; moments accumulate after burn_in
  long long burn_in = 0;
  std::uint64_t seed = 0;  // base seed; replica streams derive from it
  int replica_count = 1;
};

void validate(const SAConfig& cfg);

// Geometric forgetting rate tau(alpha) = min(mu_bar * alpha / 8, rho / 4) and
// the burn-in floor ceil(safety / tau).  The default safety factor 20 ln 10
// targets 1e-20 residual dependence on the initial condition.
double tau_rate(double alpha, double mu_bar, double rho);
long long default_burn_in(double alpha, double mu_bar, double rho,
                          double safety = 46.051701859880913680);

// Streaming moments of Delta = theta - center: mean, E||Delta||^(2j) for
// 2j <= max_even_moment, and the second-moment matrix E[Delta Delta^T].
class MomentAccumulator {
 public:
  MomentAccumulator(int dim, Eigen::VectorXd center, int max_even_moment = 4);

  void add(const Eigen::VectorXd& theta) {
    delta_ = theta - center_;
    sum_ += delta_;
    double r2 = delta_.squaredNorm();
    double p = 1.0;
    for (std::size_t j = 0; j < pow_sums_.size(); ++j) {
      p *= r2;
      pow_sums_[j] += p;
    }
    outer_.noalias() += delta_ * delta_.transpose();
    ++count_;
  }

  void merge(const MomentAccumulator& other);

  long long count() const { return count_; }
  int dim() const { return static_cast<int>(center_.size()); }
  int max_even_moment() const { return 2 * static_cast<int>(pow_sums_.size()); }
  const Eigen::VectorXd& center() const { return center_; }

  Eigen::VectorXd mean() const;                // E[Delta]
  double even_moment(int order) const;         // E||Delta||^order, order even
  Eigen::MatrixXd second_moment_matrix() const;

 private:
  Eigen::VectorXd center_, sum_, delta_;
  std::vector<double> pow_sums_;  // sums of ||Delta||^2, ||Delta||^4, ...
  Eigen::MatrixXd outer_;
  long long count_ = 0;
};

struct MomentSnapshot {
  long long count = 0;
  Eigen::VectorXd mean;
  double m2 = 0.0;
  double m4 = 0.0;
  std::vector<double> even_moments;     // E||Delta||^2, ^4, ... up to configured order
  Eigen::MatrixXd second_moment_matrix;
  Eigen::MatrixXd m_alpha;              // second_moment_matrix / alpha
  double alpha = 0.0;
};

MomentSnapshot moment_snapshot(const MomentAccumulator& acc, double alpha);

// One parameter update given an already-sampled next state's drift value.
inline Eigen::VectorXd sa_step(const Eigen::VectorXd& theta, double alpha,
                               const Eigen::VectorXd& g_value, const Eigen::VectorXd& xi) {
  return theta + alpha * (g_value + xi);
}

// A kernel + update map + noise spec + initial condition, ready to run.
template <class Kernel, class Map>
struct Problem {
  Kernel kernel;
  Map map;
  NoiseSpec noise;
  Eigen::VectorXd theta0;
  typename Kernel::State x0;

  int dim() const { return static_cast<int>(theta0.size()); }
};

struct SARunResult {
  MomentAccumulator moments;
  Eigen::VectorXd theta_final;
  long long steps = 0;
};

namespace detail {

struct NoOpObserver {
  template <class StateT>
  void operator()(long long, const Eigen::VectorXd&, const StateT&, const StateT&,
                  const Eigen::VectorXd&) const {}
};

inline void check_divergence(const Eigen::VectorXd& theta, double bound, long long k) {
  double n2 = theta.squaredNorm();
  if (!(n2 <= bound * bound)) {
    throw std::runtime_error("sa_engine: iterate diverged at step " + std::to_string(k) +
                             " (||theta|| = " + std::to_string(std::sqrt(n2)) + ")");
  }
}

}  // namespace detail

// Core driver.  The observer is invoked after every post-burn-in step as
// obs(k, theta_before, x_before, x_after, theta_after), exposing the full
// stationary transition triple; pass the default to collect moments only.
// The moment accumulator centers on `center` (typically theta_star; pass
// theta0 or zero when no root is known).
template <class Kernel, class Map, class Observer = detail::NoOpObserver>
SARunResult run_sa(const Problem<Kernel, Map>& pb, const SAConfig& cfg,
                   const Eigen::VectorXd& center, RngStream stream,
                   Observer&& obs = Observer{}) {
  validate(cfg);
  if (center.size() != pb.theta0.size())
    throw std::invalid_argument("run_sa: center dimension mismatch");

  typename Kernel::Workspace ws(pb.kernel);
  const int nu = pb.kernel.uniform_draws();
  const int ng = pb.kernel.gauss_draws();
  const int d = pb.dim();
  const bool noisy = pb.noise.kind != NoiseKind::none;

  std::vector<double> u(std::max(nu, 1));
  std::vector<double> g(std::max(ng, 1));
  std::vector<double> xi(noisy ? d : 1);
  StepDraws draws;
  draws.uniform = u.data();
  draws.gauss = g.data();
  draws.noise = xi.data();

  Eigen::VectorXd theta = pb.theta0;
  Eigen::VectorXd theta_prev(d);
  Eigen::VectorXd gbuf(d);
  typename Kernel::State x = pb.x0;
  typename Kernel::State x_prev = pb.x0;
  const double diverge_bound = 1e6 * (1.0 + pb.theta0.norm());

  MomentAccumulator acc(d, center);
  for (long long k = 1; k <= cfg.n_steps; ++k) {
    stream.fill_uniform(u.data(), nu);
    stream.fill_gauss(g.data(), ng);
    if (noisy) stream.fill_gauss(xi.data(), d);

    theta_prev = theta;
    x_prev = x;
    x = pb.kernel.advance(theta, x, draws, ws);
    pb.map.eval_into(theta, x, gbuf);
    if (noisy) {
      double s = pb.noise.scale;
      if (pb.noise.kind == NoiseKind::theta_scaled) s *= 1.0 + theta_prev.norm();
      for (int i = 0; i < d; ++i) gbuf[i] += s * xi[i];
    }
    theta += cfg.alpha * gbuf;

    detail::check_divergence(theta, diverge_bound, k);
    if (k > cfg.burn_in) {
      acc.add(theta);
      obs(k, theta_prev, x_prev, x, theta);
    }
  }
  return SARunResult{std::move(acc), theta, cfg.n_steps};
}

// Two chains driven by the same primitive draws.  Records squared parameter,
// state, and joint distances after every step (index 0 holds the initial
// distances) plus the first step at which the joint distance hits zero.
struct CoupledTrace {
  std::vector<double> theta_d2;
  std::vector<double> x_d2;
  std::vector<double> joint_d2;
  long long meeting_step = -1;
};

template <class Kernel, class Map>
CoupledTrace run_coupled(const Problem<Kernel, Map>& pb, const SAConfig& cfg,
                         const Eigen::VectorXd& theta0_b,
                         const typename Kernel::State& x0_b, RngStream stream) {
  validate(cfg);
  if (theta0_b.size() != pb.theta0.size())
    throw std::invalid_argument("run_coupled: theta dimension mismatch");

  typename Kernel::Workspace ws(pb.kernel);
  const int nu = pb.kernel.uniform_draws();
  const int ng = pb.kernel.gauss_draws();
  const int d = pb.dim();
  const bool noisy = pb.noise.kind != NoiseKind::none;

  std::vector<double> u(std::max(nu, 1));
  std::vector<double> g(std::max(ng, 1));
  std::vector<double> xi(noisy ? d : 1);
  StepDraws draws;
  draws.uniform = u.data();
  draws.gauss = g.data();
  draws.noise = xi.data();

  Eigen::VectorXd ta = pb.theta0, tb = theta0_b;
  Eigen::VectorXd ga(d), gb(d);
  typename Kernel::State xa = pb.x0, xb = x0_b;
  const double diverge_bound = 1e6 * (1.0 + std::max(ta.norm(), tb.norm()));

  CoupledTrace trace;
  trace.theta_d2.reserve(cfg.n_steps + 1);
  trace.x_d2.reserve(cfg.n_steps + 1);
  trace.joint_d2.reserve(cfg.n_steps + 1);
  auto record = [&](long long k) {
    double td = (ta - tb).squaredNorm();
    double xd = pb.kernel.state_distance(xa, xb);
    double joint = td + xd * xd;
    trace.theta_d2.push_back(td);
    trace.x_d2.push_back(xd * xd);
    trace.joint_d2.push_back(joint);
    if (trace.meeting_step < 0 && joint == 0.0) trace.meeting_step = k;
  };
  record(0);

  for (long long k = 1; k <= cfg.n_steps; ++k) {
    stream.fill_uniform(u.data(), nu);
    stream.fill_gauss(g.data(), ng);
    if (noisy) stream.fill_gauss(xi.data(), d);

    auto xa_next = pb.kernel.advance(ta, xa, draws, ws);
    auto xb_next = pb.kernel.advance(tb, xb, draws, ws);
    pb.map.eval_into(ta, xa_next, ga);
    pb.map.eval_into(tb, xb_next, gb);
    if (noisy) {
      double scale_a = pb.noise.scale, scale_b = pb.noise.scale;
      if (pb.noise.kind == NoiseKind::theta_scaled) {
        scale_a *= 1.0 + ta.norm();
        scale_b *= 1.0 + tb.norm();
      }
      for (int i = 0; i < d; ++i) {
        ga[i] += scale_a * xi[i];
        gb[i] += scale_b * xi[i];
      }
    }
    ta += cfg.alpha * ga;
    tb += cfg.alpha * gb;
    xa = xa_next;
    xb = xb_next;
    detail::check_divergence(ta, diverge_bound, k);
    detail::check_divergence(tb, diverge_bound, k);
    record(k);
  }
  return trace;
}

// Runs fn(i) for i in [0, n) on `threads` workers.  Work items own disjoint
// output slots, so scheduling cannot affect results; the first exception is
// rethrown after all workers finish.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

// Replica fan-out: replica r runs with stream split(cfg.seed, r).  Results
// are returned in replica order regardless of the thread count.
template <class Kernel, class Map>
std::vector<SARunResult> run_replicas(const Problem<Kernel, Map>& pb, const SAConfig& cfg,
                                      const Eigen::VectorXd& center, int threads) {
  validate(cfg);
  if (cfg.replica_count < 1)
    throw std::invalid_argument("run_replicas: replica_count must be >= 1");
  std::vector<SARunResult> results(
      cfg.replica_count, SARunResult{MomentAccumulator(pb.dim(), center), {}, 0});
  parallel_for(cfg.replica_count, threads, [&](int r) {
    results[r] = run_sa(pb, cfg, center, RngStream::split(cfg.seed, r));
  });
  return results;
}

}  // namespace salab
