#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "salab/estimators.hpp"
#include "salab/gateaux.hpp"
#include "salab/kernels.hpp"
#include "salab/mean_field.hpp"
#include "salab/poisson.hpp"
#include "salab/rng.hpp"
#include "salab/sa_engine.hpp"

using salab::FiniteKernel;
using salab::Finite2Params;
using salab::FiniteMap;
using salab::RngStream;

namespace {

Eigen::VectorXd vec1(double v) {
  Eigen::VectorXd t(1);
  t[0] = v;
  return t;
}

}  // namespace

TEST_CASE("bias estimate averages replicas and reports the spread") {
  std::vector<Eigen::VectorXd> means = {vec1(1.0), vec1(2.0), vec1(3.0)};
  salab::BiasEstimate b = salab::bias_estimate(means);
  CHECK(b.n_replicas == 3);
  CHECK(b.bias[0] == doctest::Approx(2.0).epsilon(1e-15));
  // sample sd is 1, so the standard error is 1/sqrt(3)
  CHECK(b.std_error[0] == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
  CHECK_THROWS_AS(salab::bias_estimate({vec1(1.0)}), std::invalid_argument);
}

TEST_CASE("log-log slope recovers an exact power law") {
  std::vector<salab::ScalingRow> rows;
  for (double a : {0.04, 0.02, 0.01, 0.005})
    rows.push_back({a, 3.0 * a * a, 0.0, 8});
  salab::ScalingReport rep = salab::loglog_slope(rows);
  CHECK(rep.slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rep.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::exp(rep.intercept) == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("log-log slope rejects estimates buried in noise") {
  std::vector<salab::ScalingRow> rows = {{0.04, 1e-3, 1e-4, 8}, {0.02, -2e-6, 1e-4, 8}};
  CHECK_THROWS_WITH_AS(salab::loglog_slope(rows), doctest::Contains("noise floor"),
                       std::runtime_error);
}

TEST_CASE("richardson-romberg pairing cancels the linear term exactly") {
  // means m(alpha) = theta* + c alpha: the pairing reproduces theta* for
  // every usable alpha
  double star = 0.7, c = -3.2;
  std::map<double, std::pair<Eigen::VectorXd, Eigen::VectorXd>> means;
  for (double a : {0.04, 0.02, 0.01})
    means[a] = {vec1(star + c * a), vec1(0.001)};
  std::vector<salab::RRRow> rows = salab::rr_extrapolate(means);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.value[0] == doctest::Approx(star).epsilon(1e-12));
    CHECK(r.std_error[0] ==
          doctest::Approx(std::sqrt(5.0) * 0.001).epsilon(1e-12));
  }
  CHECK(rows[0].alpha == doctest::Approx(0.01));
  CHECK(rows[1].alpha == doctest::Approx(0.02));
}

TEST_CASE("richardson-romberg needs a doubled stepsize to pair with") {
  std::map<double, std::pair<Eigen::VectorXd, Eigen::VectorXd>> means;
  means[0.04] = {vec1(1.0), vec1(0.0)};
  means[0.03] = {vec1(1.0), vec1(0.0)};
  CHECK_THROWS_WITH_AS(salab::rr_extrapolate(means), doctest::Contains("no stepsize pairs"),
                       std::invalid_argument);
}

TEST_CASE("green-kubo estimate matches the AR(1) closed form") {
  // x' = phi x + eps with phi = 0.5, unit innovations: the long-run variance
  // of the running mean is s^2 / (1 - phi)^2 = 4
  const double phi = 0.5;
  RngStream rng(1234);
  const int n = 400000;
  Eigen::MatrixXd series(n, 1);
  double x = 0.0;
  for (int i = 0; i < n; ++i) {
    x = phi * x + rng.gauss();
    series(i, 0) = x;
  }
  salab::GreenKuboEstimate gk = salab::green_kubo(series, 200);
  CHECK(gk.sigma(0, 0) == doctest::Approx(4.0).epsilon(0.06));
  // lag-0 term is the plain variance 1/(1 - phi^2)
  CHECK(gk.variance_term(0, 0) == doctest::Approx(1.0 / 0.75).epsilon(0.03));
  // first lag covariance is phi times the variance
  CHECK(gk.lag_covariances[0](0, 0) ==
        doctest::Approx(phi / 0.75).epsilon(0.05));
  CHECK(gk.plateau);
  CHECK(gk.truncation_lag < 200);
}

TEST_CASE("green-kubo on white noise reduces to the variance") {
  RngStream rng(55);
  const int n = 200000;
  Eigen::MatrixXd series(n, 1);
  for (int i = 0; i < n; ++i) series(i, 0) = rng.gauss();
  salab::GreenKuboEstimate gk = salab::green_kubo(series, 100);
  CHECK(gk.sigma(0, 0) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("green-kubo refuses short series") {
  Eigen::MatrixXd series(100, 1);
  series.setZero();
  CHECK_THROWS_WITH_AS(salab::green_kubo(series, 50), doctest::Contains("at least"),
                       std::invalid_argument);
}

TEST_CASE("clt coverage is near nominal for synthetic gaussian means") {
  // replica means drawn exactly from the CLT limit: coverage should sit near
  // the nominal level up to binomial noise
  RngStream rng(31337);
  const int reps = 2000;
  const long long steps = 400;
  const double sigma2 = 4.0;
  Eigen::MatrixXd means(reps, 1);
  for (int r = 0; r < reps; ++r)
    means(r, 0) = std::sqrt(sigma2 / static_cast<double>(steps)) * rng.gauss();
  Eigen::MatrixXd sigma(1, 1);
  sigma << sigma2;
  salab::CLTCoverage cov = salab::clt_coverage(means, steps, sigma, 0.95);
  CHECK(cov.n_replicas == reps);
  CHECK(cov.nominal == 0.95);
  // binomial sd is sqrt(.95*.05/2000) = 0.0049; allow four of those
  CHECK(cov.coverage == doctest::Approx(0.95).epsilon(0.021));
  CHECK(cov.threshold == doctest::Approx(3.841458820694124).epsilon(1e-9));
  CHECK(cov.n_inside == static_cast<int>(std::lround(cov.coverage * reps)));
}

TEST_CASE("clt coverage requires enough replicas") {
  Eigen::MatrixXd means(150, 1);
  means.setZero();
  Eigen::MatrixXd sigma(1, 1);
  sigma << 1.0;
  CHECK_THROWS_AS(salab::clt_coverage(means, 100, sigma), std::invalid_argument);
}

TEST_CASE("geometric rate fit recovers an exact decay") {
  std::vector<double> d2;
  for (int k = 0; k < 50; ++k) d2.push_back(9.0 * std::pow(0.8, k));
  salab::GeometricRateFit fit = salab::geometric_rate_fit(d2);
  CHECK(fit.rate == doctest::Approx(std::log(0.8)).epsilon(1e-12));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.window == 50);
}

TEST_CASE("geometric rate fit stops at the meeting point") {
  std::vector<double> d2;
  for (int k = 0; k < 20; ++k) d2.push_back(std::pow(0.5, k));
  for (int k = 0; k < 30; ++k) d2.push_back(0.0);
  salab::GeometricRateFit fit = salab::geometric_rate_fit(d2);
  CHECK(fit.window == 20);
  CHECK(fit.rate == doctest::Approx(std::log(0.5)).epsilon(1e-10));
}

TEST_CASE("geometric rate fit needs a usable prefix") {
  CHECK_THROWS_WITH_AS(salab::geometric_rate_fit({0.0, 0.0, 0.0}),
                       doctest::Contains("degenerate"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Stationary bias decomposition.
// ---------------------------------------------------------------------------

namespace {

struct DecompRun {
  salab::BiasTermDecomposition dec;
  Eigen::MatrixXd lambda_bar;
  Eigen::MatrixXd jacobian;
};

// Runs the SA recursion on a two-state problem, collects thinned stationary
// triples per replica, and feeds them through the decomposition with exact
// operator inputs at the root.
DecompRun run_decomposition(const Finite2Params& p, const Eigen::MatrixXd& h, double alpha,
                            int replicas, int samples, std::uint64_t seed) {
  FiniteKernel kernel = FiniteKernel::finite2(p);
  FiniteMap map = FiniteMap::linear_hx(h);
  salab::RootCertificate cert = salab::find_root(kernel, map, vec1(0.0));

  Eigen::MatrixXd P = kernel.transition_matrix(cert.theta_star);
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  Eigen::MatrixXd f = salab::drift_table(kernel, map, cert.theta_star);
  salab::PoissonSolution sol = salab::poisson_solve_exact(P, pi, f);
  salab::GateauxOperator op = salab::gateaux_derivative(kernel, cert.theta_star, sol.values, pi);

  salab::Problem<FiniteKernel, FiniteMap> pb{kernel, map, {}, cert.theta_star, 0};
  const int gap = 40;
  salab::SAConfig cfg;
  cfg.alpha = alpha;
  cfg.burn_in = 4000;
  cfg.n_steps = cfg.burn_in + static_cast<long long>(gap) * samples;
  std::vector<std::vector<salab::StationaryTriple>> trip(replicas);
  for (int r = 0; r < replicas; ++r) {
    auto& mine = trip[r];
    mine.reserve(samples);
    salab::run_sa(pb, cfg, cert.theta_star, RngStream::split(seed, r),
                  [&](long long k, const Eigen::VectorXd& before, const int& xb,
                      const int& xn, const Eigen::VectorXd&) {
                    if ((k - cfg.burn_in - 1) % gap == 0)
                      mine.push_back({before, xb, xn});
                  });
  }

  salab::DecompositionInputs in;
  in.theta_star = cert.theta_star;
  in.jacobian = cert.jacobian;
  in.ghat = sol.values;
  in.lambda_bar = op.lambda_bar;
  return {salab::bias_term_decomposition(kernel, map, in, trip), op.lambda_bar,
          cert.jacobian};
}

}  // namespace

TEST_CASE("decomposition terms vanish identically on the decision-independent control") {
  Finite2Params p;
  p.a0 = 0.6;
  p.a1 = 0.0;
  p.b0 = 0.3;
  p.b1 = 0.0;
  Eigen::MatrixXd h(2, 1);
  h << 1.0, -1.0;
  DecompRun run = run_decomposition(p, h, 0.02, 8, 400, 2025);

  // the kernel ignores theta, so the kernel-response term is zero sample by
  // sample; the linear map kills the fluctuation and remainder terms too, up
  // to the roundoff left by the numerically estimated Jacobian
  CHECK(run.dec.term_i.value[0] == 0.0);
  CHECK(run.dec.term_i.std_error[0] == 0.0);
  CHECK(std::abs(run.dec.term_ii_fluct.value[0]) < 1e-12);
  CHECK(run.dec.term_iii.value[0] == 0.0);
  CHECK(std::abs(run.dec.term_iv.value[0]) < 1e-12);
  CHECK(run.dec.n_replicas == 8);
  CHECK(run.dec.n_samples == 8 * 400);

  // with every term zero the identity reduces to J * bias, and the bias of
  // this linear recursion is itself zero in expectation
  CHECK(std::abs(run.dec.residual[0]) <= 5.0 * run.dec.residual_se[0]);
}

TEST_CASE("decomposition residual is statistically zero on a responsive problem") {
  Finite2Params p;
  p.a0 = 0.55;
  p.a1 = 0.25;
  p.b0 = 0.45;
  p.b1 = 0.15;
  p.theta_ref = 0.4;
  Eigen::MatrixXd h(2, 1);
  h << 1.0, -0.6;
  DecompRun run = run_decomposition(p, h, 0.02, 12, 600, 777);

  CHECK(run.dec.term_i.std_error[0] > 0.0);
  CHECK(std::abs(run.dec.residual[0]) <= 5.0 * run.dec.residual_se[0]);

  // first-order reconstruction: bias solves -(lambda + J) b = I' + II + III + IV
  salab::BiasOperator op = salab::bias_operator(run.lambda_bar, run.jacobian);
  REQUIRE(op.invertible);
  Eigen::VectorXd rhs = run.dec.term_i.value - run.lambda_bar * run.dec.bias_hat +
                        run.dec.term_ii_fluct.value + run.dec.term_iii.value +
                        run.dec.term_iv.value;
  Eigen::VectorXd recon = -op.matrix.partialPivLu().solve(rhs);
  // agreement is statistical: the reconstruction uses the same samples, so it
  // tracks bias_hat up to a few standard errors
  CHECK(std::abs(recon[0] - run.dec.bias_hat[0]) <= 6.0 * run.dec.bias_se[0]);
}

TEST_CASE("decomposition validates its inputs") {
  Finite2Params p;
  FiniteKernel kernel = FiniteKernel::finite2(p);
  Eigen::MatrixXd h(2, 1);
  h << 1.0, -1.0;
  FiniteMap map = FiniteMap::linear_hx(h);
  salab::DecompositionInputs in;
  in.theta_star = vec1(0.0);
  in.jacobian = Eigen::MatrixXd::Identity(1, 1);
  in.ghat = Eigen::MatrixXd::Zero(2, 1);
  in.lambda_bar = Eigen::MatrixXd::Zero(1, 1);
  CHECK_THROWS_AS(salab::bias_term_decomposition(kernel, map, in, {}),
                  std::invalid_argument);
}
