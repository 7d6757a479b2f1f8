#include "salab/sa_engine.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace salab {

void validate(const SAConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0))
    throw std::invalid_argument("sa_config.alpha: must lie in (0,1]");
  if (cfg.n_steps < 1) throw std::invalid_argument("sa_config.n_steps: must be >= 1");
  if (cfg.burn_in < 0 || cfg.burn_in >= cfg.n_steps)
    throw std::invalid_argument("sa_config.burn_in: must satisfy 0 <= burn_in < n_steps");
}

double tau_rate(double alpha, double mu_bar, double rho) {
  if (!(alpha > 0) || !(mu_bar > 0) || !(rho > 0))
    throw std::invalid_argument("tau_rate: alpha, mu_bar, rho must all be positive");
  return std::min(mu_bar * alpha / 8.0, rho / 4.0);
}

long long default_burn_in(double alpha, double mu_bar, double rho, double safety) {
  double tau = tau_rate(alpha, mu_bar, rho);
  return static_cast<long long>(std::ceil(safety / tau));
}

MomentAccumulator::MomentAccumulator(int dim, Eigen::VectorXd center, int max_even_moment)
    : center_(std::move(center)),
      sum_(Eigen::VectorXd::Zero(dim)),
      delta_(Eigen::VectorXd::Zero(dim)),
      outer_(Eigen::MatrixXd::Zero(dim, dim)) {
  if (dim < 1) throw std::invalid_argument("MomentAccumulator: dim must be >= 1");
  if (center_.size() != dim)
    throw std::invalid_argument("MomentAccumulator: center dimension mismatch");
  if (max_even_moment < 2 || max_even_moment % 2 != 0)
    throw std::invalid_argument("MomentAccumulator: max_even_moment must be even and >= 2");
  pow_sums_.assign(max_even_moment / 2, 0.0);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.dim() != dim() || other.pow_sums_.size() != pow_sums_.size())
    throw std::invalid_argument("MomentAccumulator::merge: shape mismatch");
  if ((other.center_ - center_).cwiseAbs().maxCoeff() != 0.0)
    throw std::invalid_argument("MomentAccumulator::merge: centers differ");
  sum_ += other.sum_;
  for (std::size_t j = 0; j < pow_sums_.size(); ++j) pow_sums_[j] += other.pow_sums_[j];
  outer_ += other.outer_;
  count_ += other.count_;
}

Eigen::VectorXd MomentAccumulator::mean() const {
  if (count_ == 0) throw std::runtime_error("MomentAccumulator: no samples accumulated");
  return sum_ / static_cast<double>(count_);
}

double MomentAccumulator::even_moment(int order) const {
  if (count_ == 0) throw std::runtime_error("MomentAccumulator: no samples accumulated");
  if (order < 2 || order % 2 != 0 ||
      static_cast<std::size_t>(order / 2) > pow_sums_.size())
    throw std::invalid_argument("MomentAccumulator: moment order not tracked");
  return pow_sums_[order / 2 - 1] / static_cast<double>(count_);
}

Eigen::MatrixXd MomentAccumulator::second_moment_matrix() const {
  if (count_ == 0) throw std::runtime_error("MomentAccumulator: no samples accumulated");
  return outer_ / static_cast<double>(count_);
}

MomentSnapshot moment_snapshot(const MomentAccumulator& acc, double alpha) {
  if (acc.count() == 0)
    throw std::runtime_error("moment_snapshot: accumulator holds no samples");
  if (!(alpha > 0)) throw std::invalid_argument("moment_snapshot: alpha must be positive");
  MomentSnapshot snap;
  snap.count = acc.count();
  snap.mean = acc.mean();
  snap.m2 = acc.even_moment(2);
  snap.m4 = acc.even_moment(4);
  for (int order = 2; order <= acc.max_even_moment(); order += 2)
    snap.even_moments.push_back(acc.even_moment(order));
  snap.second_moment_matrix = acc.second_moment_matrix();
  snap.m_alpha = snap.second_moment_matrix / alpha;
  snap.alpha = alpha;
  return snap;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (threads < 1) throw std::invalid_argument("parallel_for: threads must be >= 1");
  if (threads == 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  int n_workers = std::min(threads, n);
  pool.reserve(n_workers);
  for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace salab
