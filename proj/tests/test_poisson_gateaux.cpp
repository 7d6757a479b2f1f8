#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "salab/gateaux.hpp"
#include "salab/kernels.hpp"
#include "salab/mean_field.hpp"
#include "salab/poisson.hpp"
#include "salab/rng.hpp"

using salab::FiniteKernel;
using salab::Finite2Params;
using salab::FiniteMap;
using salab::RngStream;

namespace {

Eigen::VectorXd theta1(double v) {
  Eigen::VectorXd t(1);
  t[0] = v;
  return t;
}

Eigen::MatrixXd random_ergodic_chain(int n, RngStream& rng) {
  Eigen::MatrixXd P(n, n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      P(i, j) = 0.05 + rng.uniform();
      s += P(i, j);
    }
    P.row(i) /= s;
  }
  return P;
}

}  // namespace

TEST_CASE("two-state poisson solution has the eigenvector closed form") {
  // For P = [[1-a, a], [b, 1-b]] the centered observable spans the second
  // eigenspace (eigenvalue 1 - a - b), so the solution is (f - pi f) / (a + b).
  double a = 0.3, b = 0.4;
  Eigen::MatrixXd P(2, 2);
  P << 1 - a, a, b, 1 - b;
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  Eigen::MatrixXd f(2, 1);
  f << 2.0, -1.0;

  double pif = pi[0] * f(0, 0) + pi[1] * f(1, 0);
  Eigen::MatrixXd expect(2, 1);
  expect << (f(0, 0) - pif) / (a + b), (f(1, 0) - pif) / (a + b);

  salab::PoissonSolution sol = salab::poisson_solve_exact(P, pi, f);
  CHECK(sol.values(0, 0) == doctest::Approx(expect(0, 0)).epsilon(1e-12));
  CHECK(sol.values(1, 0) == doctest::Approx(expect(1, 0)).epsilon(1e-12));
  CHECK(sol.centering_residual < 1e-12);
  CHECK(sol.equation_residual < 1e-12);
  CHECK(sol.series_depth == 0);
}

TEST_CASE("series solve converges to the exact solution with a honest tail bound") {
  RngStream rng(404);
  Eigen::MatrixXd P = random_ergodic_chain(4, rng);
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  Eigen::MatrixXd f(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) f(i, j) = rng.gauss();

  salab::PoissonSolution exact = salab::poisson_solve_exact(P, pi, f);
  salab::PoissonSolution series = salab::poisson_solve_series(P, pi, f, 200, 0.5);
  CHECK((exact.values - series.values).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(series.series_depth == 200);
  // bound formula: (1 - rho)^depth ||f - pi f||_inf / rho
  Eigen::MatrixXd centered = f;
  for (int j = 0; j < 2; ++j) centered.col(j).array() -= pi.dot(f.col(j));
  double expect_bound =
      std::pow(0.5, 200) * centered.cwiseAbs().maxCoeff() / 0.5;
  CHECK(series.tail_bound == doctest::Approx(expect_bound).epsilon(1e-12));

  // without a contraction estimate the bound is not claimed
  salab::PoissonSolution no_rho = salab::poisson_solve_series(P, pi, f, 50);
  CHECK(no_rho.tail_bound == std::numeric_limits<double>::infinity());
}

TEST_CASE("poisson residual invariants hold on random chains") {
  RngStream rng(2718);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd P = random_ergodic_chain(5, rng);
    Eigen::VectorXd pi = salab::stationary_distribution(P);
    Eigen::MatrixXd f(5, 1);
    for (int i = 0; i < 5; ++i) f(i, 0) = rng.gauss();
    salab::PoissonSolution sol = salab::poisson_solve_exact(P, pi, f);
    CHECK(sol.centering_residual < 1e-10);
    CHECK(sol.equation_residual < 1e-10);
  }
}

TEST_CASE("apply_kernel is a plain one-step expectation") {
  Finite2Params p;
  p.a0 = 0.6;
  p.a1 = 0.0;
  p.b0 = 0.3;
  p.b1 = 0.0;
  FiniteKernel k = FiniteKernel::finite2(p);
  Eigen::MatrixXd h(2, 1);
  h << 5.0, -3.0;
  Eigen::MatrixXd Ph = salab::apply_kernel(k, theta1(0.0), h);
  CHECK(Ph(0, 0) == doctest::Approx(0.4 * 5.0 + 0.6 * -3.0).epsilon(1e-14));
  CHECK(Ph(1, 0) == doctest::Approx(0.3 * 5.0 + 0.7 * -3.0).epsilon(1e-14));
}

TEST_CASE("monte-carlo one-step expectation approaches the exact row") {
  Finite2Params p;
  p.a0 = 0.6;
  p.a1 = 0.0;
  p.b0 = 0.3;
  p.b1 = 0.0;
  FiniteKernel k = FiniteKernel::finite2(p);
  auto h = [](int x) { return x == 0 ? 5.0 : -3.0; };
  double mc = salab::apply_kernel_mc(k, theta1(0.0), 0, h, 400000, 9);
  CHECK(mc == doctest::Approx(0.4 * 5.0 + 0.6 * -3.0).epsilon(0.01));
}

TEST_CASE("drift table stacks map values by state") {
  Finite2Params p;
  FiniteKernel k = FiniteKernel::finite2(p);
  Eigen::MatrixXd h(2, 1);
  h << 2.0, -1.0;
  FiniteMap m = FiniteMap::linear_hx(h);
  Eigen::MatrixXd f = salab::drift_table(k, m, theta1(0.25));
  CHECK(f(0, 0) == doctest::Approx(-0.25 + 2.0).epsilon(1e-15));
  CHECK(f(1, 0) == doctest::Approx(-0.25 - 1.0).epsilon(1e-15));
}

TEST_CASE("kernel derivative matches the two-state closed form") {
  // With a(theta) = a0 + a1 tanh(theta - ref) and b likewise, the directional
  // derivative of P ghat acts through the single scalar sech^2(theta - ref):
  //   row 0: a1 sech^2 (ghat_1 - ghat_0),  row 1: b1 sech^2 (ghat_1 - ghat_0)
  // giving lambda_bar = (pi_0 a1 + pi_1 b1) sech^2 (ghat_1 - ghat_0).
  Finite2Params p;
  p.a0 = 0.55;
  p.a1 = 0.25;
  p.b0 = 0.45;
  p.b1 = 0.15;
  p.theta_ref = 0.4;
  FiniteKernel k = FiniteKernel::finite2(p);
  Eigen::MatrixXd h(2, 1);
  h << 1.0, -0.6;
  FiniteMap m = FiniteMap::linear_hx(h);

  Eigen::VectorXd th = theta1(0.2);
  Eigen::MatrixXd P = k.transition_matrix(th);
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  Eigen::MatrixXd f = salab::drift_table(k, m, th);
  salab::PoissonSolution sol = salab::poisson_solve_exact(P, pi, f);

  salab::GateauxOperator op = salab::gateaux_derivative(k, th, sol.values, pi);
  double sech2 = 1.0 / std::pow(std::cosh(0.2 - 0.4), 2);
  double dg = sol.values(1, 0) - sol.values(0, 0);
  double expect = (pi[0] * 0.25 + pi[1] * 0.15) * sech2 * dg;
  CHECK(op.lambda_bar(0, 0) == doctest::Approx(expect).epsilon(1e-8));
  CHECK(op.warnings.empty());
  CHECK(op.fd_step_used > 0.0);

  // basis_action rows carry the same structure before averaging
  CHECK(op.basis_action[0](0, 0) == doctest::Approx(0.25 * sech2 * dg).epsilon(1e-7));
  CHECK(op.basis_action[0](1, 0) == doctest::Approx(0.15 * sech2 * dg).epsilon(1e-7));

  // apply() reduces to the single basis matrix in one dimension
  Eigen::VectorXd u(1);
  u << 2.0;
  CHECK(op.apply(u)(0, 0) == doctest::Approx(2.0 * op.basis_action[0](0, 0)));
}

TEST_CASE("remainder scan certifies a quadratic remainder on the smooth family") {
  Finite2Params p;
  p.a0 = 0.55;
  p.a1 = 0.25;
  p.b0 = 0.45;
  p.b1 = 0.15;
  p.theta_ref = 0.4;  // root sits away from the ref, so curvature is active
  FiniteKernel k = FiniteKernel::finite2(p);
  Eigen::MatrixXd h(2, 1);
  h << 1.0, -0.6;
  FiniteMap m = FiniteMap::linear_hx(h);
  salab::RootCertificate cert = salab::find_root(k, m, theta1(0.0));

  Eigen::MatrixXd P = k.transition_matrix(cert.theta_star);
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  Eigen::MatrixXd f = salab::drift_table(k, m, cert.theta_star);
  salab::PoissonSolution sol = salab::poisson_solve_exact(P, pi, f);
  salab::GateauxOperator op = salab::gateaux_derivative(k, cert.theta_star, sol.values, pi);

  salab::WDRemainderReport rep = salab::wd_remainder_scan(k, cert.theta_star, sol.values, op);
  CHECK(rep.fitted_exponent > 1.9);
  CHECK(rep.fitted_exponent < 2.1);
  CHECK_FALSE(rep.violation);
  CHECK_FALSE(rep.exact_linear);
  CHECK(rep.c_wd_hat > 0.0);
  CHECK(rep.radii.size() == rep.sup_remainders.size());
}

TEST_CASE("remainder scan flags the kink family") {
  Finite2Params p;
  p.a0 = 0.5;
  p.a1 = 0.2;
  p.b0 = 0.5;
  p.b1 = 0.2;
  p.theta_ref = 0.0;
  p.abs_drive = true;  // |theta| drive puts a kink exactly at the root
  FiniteKernel k = FiniteKernel::finite2(p);
  Eigen::MatrixXd h(2, 1);
  h << 1.0, -1.0;
  FiniteMap m = FiniteMap::linear_hx(h);
  salab::RootCertificate cert = salab::find_root(k, m, theta1(0.3));
  REQUIRE(std::abs(cert.theta_star[0]) < 1e-9);

  Eigen::MatrixXd P = k.transition_matrix(cert.theta_star);
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  Eigen::MatrixXd f = salab::drift_table(k, m, cert.theta_star);
  salab::PoissonSolution sol = salab::poisson_solve_exact(P, pi, f);
  salab::GateauxOperator op = salab::gateaux_derivative(k, cert.theta_star, sol.values, pi);

  salab::WDRemainderReport rep = salab::wd_remainder_scan(k, cert.theta_star, sol.values, op);
  CHECK(rep.fitted_exponent > 0.8);
  CHECK(rep.fitted_exponent < 1.2);
  CHECK(rep.violation);
}

TEST_CASE("remainder scan reports exact linearity for a constant kernel") {
  Finite2Params p;
  p.a1 = 0.0;
  p.b1 = 0.0;
  FiniteKernel k = FiniteKernel::finite2(p);
  Eigen::MatrixXd h(2, 1);
  h << 1.0, -1.0;
  FiniteMap m = FiniteMap::linear_hx(h);

  Eigen::VectorXd th = theta1(0.0);
  Eigen::MatrixXd P = k.transition_matrix(th);
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  Eigen::MatrixXd f = salab::drift_table(k, m, th);
  salab::PoissonSolution sol = salab::poisson_solve_exact(P, pi, f);
  salab::GateauxOperator op = salab::gateaux_derivative(k, th, sol.values, pi);
  CHECK(std::abs(op.lambda_bar(0, 0)) < 1e-14);

  salab::WDRemainderReport rep = salab::wd_remainder_scan(k, th, sol.values, op);
  CHECK(rep.exact_linear);
  CHECK_FALSE(rep.violation);
}

TEST_CASE("bias operator certifies invertibility through singular values") {
  Eigen::MatrixXd lam(1, 1), jac(1, 1);
  lam << 0.25;
  jac << -1.5;
  salab::BiasOperator op = salab::bias_operator(lam, jac);
  CHECK(op.invertible);
  CHECK(op.min_singular_value == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(op.matrix(0, 0) == doctest::Approx(-1.25).epsilon(1e-15));

  lam << 1.5;  // cancels the jacobian exactly
  salab::BiasOperator sing = salab::bias_operator(lam, jac);
  CHECK_FALSE(sing.invertible);
}
