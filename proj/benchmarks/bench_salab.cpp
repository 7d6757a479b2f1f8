// Microbenchmarks for the hot paths: kernel stepping, the SA driver,
// the Poisson solver, and the long-run covariance estimator.

#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "salab/estimators.hpp"
#include "salab/kernels.hpp"
#include "salab/mean_field.hpp"
#include "salab/poisson.hpp"
#include "salab/rng.hpp"
#include "salab/sa_engine.hpp"

namespace {

Eigen::VectorXd theta1(double v) {
  Eigen::VectorXd t(1);
  t[0] = v;
  return t;
}

salab::Problem<salab::FiniteKernel, salab::FiniteMap> finite_problem() {
  salab::Finite2Params p;
  p.a0 = 0.55;
  p.a1 = 0.25;
  p.b0 = 0.45;
  p.b1 = 0.15;
  p.theta_ref = 0.4;
  Eigen::MatrixXd h(2, 1);
  h << 1.0, -0.6;
  return {salab::FiniteKernel::finite2(p), salab::FiniteMap::linear_hx(h), {}, theta1(0.0), 0};
}

void bench_kernel_advance(benchmark::State& state) {
  auto pb = finite_problem();
  salab::FiniteKernel::Workspace ws(pb.kernel);
  salab::RngStream rng(1);
  double u = 0.0;
  salab::StepDraws d;
  d.uniform = &u;
  int x = 0;
  Eigen::VectorXd th = theta1(0.2);
  for (auto _ : state) {
    u = rng.uniform();
    x = pb.kernel.advance(th, x, d, ws);
    benchmark::DoNotOptimize(x);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(bench_kernel_advance);

void bench_sa_steps(benchmark::State& state) {
  auto pb = finite_problem();
  const long long chunk = state.range(0);
  salab::SAConfig cfg;
  cfg.alpha = 0.02;
  cfg.burn_in = 0;
  cfg.n_steps = chunk;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto res = salab::run_sa(pb, cfg, pb.theta0, salab::RngStream(++seed));
    benchmark::DoNotOptimize(res.theta_final);
  }
  state.SetItemsProcessed(state.iterations() * chunk);
}
BENCHMARK(bench_sa_steps)->Arg(1 << 14);

void bench_poisson_exact(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  salab::RngStream rng(7);
  Eigen::MatrixXd P(n, n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      P(i, j) = 0.05 + rng.uniform();
      s += P(i, j);
    }
    P.row(i) /= s;
  }
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  Eigen::MatrixXd f(n, 1);
  for (int i = 0; i < n; ++i) f(i, 0) = rng.gauss();
  for (auto _ : state) {
    auto sol = salab::poisson_solve_exact(P, pi, f);
    benchmark::DoNotOptimize(sol.values);
  }
}
BENCHMARK(bench_poisson_exact)->Arg(5)->Arg(50);

void bench_green_kubo(benchmark::State& state) {
  const int n = 100000;
  salab::RngStream rng(3);
  Eigen::MatrixXd series(n, 1);
  double x = 0.0;
  for (int i = 0; i < n; ++i) {
    x = 0.5 * x + rng.gauss();
    series(i, 0) = x;
  }
  for (auto _ : state) {
    auto gk = salab::green_kubo(series, 200);
    benchmark::DoNotOptimize(gk.sigma);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(bench_green_kubo);

}  // namespace

BENCHMARK_MAIN();
