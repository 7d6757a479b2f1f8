#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "salab/kernels.hpp"

using salab::FiniteKernel;
using salab::Finite2Params;
using salab::RngStream;
using salab::StepDraws;

namespace {

Eigen::VectorXd theta1(double v) {
  Eigen::VectorXd t(1);
  t[0] = v;
  return t;
}

}  // namespace

TEST_CASE("finite2 rows follow the tanh drive and sum to one") {
  Finite2Params p;
  p.a0 = 0.55;
  p.a1 = 0.25;
  p.b0 = 0.45;
  p.b1 = 0.15;
  p.theta_ref = 0.4;
  FiniteKernel k = FiniteKernel::finite2(p);

  for (double th : {-1.5, 0.0, 0.4, 2.0}) {
    Eigen::MatrixXd P = k.transition_matrix(theta1(th));
    double drive = std::tanh(th - 0.4);
    double a = 0.55 + 0.25 * drive;
    double b = 0.45 - 0.15 * drive;
    CHECK(P(0, 1) == doctest::Approx(a).epsilon(1e-14));
    CHECK(P(1, 0) == doctest::Approx(b).epsilon(1e-14));
    CHECK(P.row(0).sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(P.row(1).sum() == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("finite2 with abs drive responds to |theta - ref|") {
  Finite2Params p;
  p.a1 = 0.2;
  p.b1 = 0.2;
  p.abs_drive = true;
  FiniteKernel k = FiniteKernel::finite2(p);
  Eigen::MatrixXd plus = k.transition_matrix(theta1(0.3));
  Eigen::MatrixXd minus = k.transition_matrix(theta1(-0.3));
  CHECK(plus(0, 1) == doctest::Approx(minus(0, 1)).epsilon(1e-15));
  CHECK(plus(0, 1) == doctest::Approx(0.5 + 0.2 * 0.3).epsilon(1e-14));
}

TEST_CASE("probability clamping keeps rows strictly ergodic") {
  Finite2Params p;
  p.a0 = 0.999999;
  p.a1 = 0.0;
  p.b0 = 0.000001;
  p.b1 = 0.0;
  FiniteKernel k = FiniteKernel::finite2(p);
  Eigen::MatrixXd P = k.transition_matrix(theta1(0.0));
  CHECK(P(0, 1) == doctest::Approx(0.999).epsilon(1e-12));
  CHECK(P(1, 0) == doctest::Approx(0.001).epsilon(1e-12));
}

TEST_CASE("builtin two-state path is bit-identical to the generic row scan") {
  Finite2Params p;
  p.a0 = 0.52;
  p.a1 = 0.3;
  p.b0 = 0.41;
  p.b1 = 0.22;
  p.theta_ref = -0.1;
  FiniteKernel fast = FiniteKernel::finite2(p);

  // freeze the same transition law as an explicit matrix at each theta
  RngStream rng(555);
  FiniteKernel::Workspace ws_fast(fast);
  int xf = 0, xg = 0;
  double u;
  StepDraws d;
  d.uniform = &u;
  for (int i = 0; i < 20000; ++i) {
    double th = std::sin(0.01 * i);  // wander through the drive range
    FiniteKernel slow = FiniteKernel::from_matrix(fast.transition_matrix(theta1(th)));
    FiniteKernel::Workspace ws_slow(slow);
    u = rng.uniform();
    xf = fast.advance(theta1(th), xf, d, ws_fast);
    xg = slow.advance(theta1(th), xg, d, ws_slow);
    REQUIRE(xf == xg);
  }
}

TEST_CASE("two-state stationary law matches (b, a) / (a + b)") {
  Eigen::MatrixXd P(2, 2);
  double a = 0.3, b = 0.2;
  P << 1 - a, a, b, 1 - b;
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  CHECK(pi[0] == doctest::Approx(b / (a + b)).epsilon(1e-13));
  CHECK(pi[1] == doctest::Approx(a / (a + b)).epsilon(1e-13));
}

TEST_CASE("stationary law satisfies the balance equations on a bigger chain") {
  RngStream rng(31);
  Eigen::MatrixXd P(5, 5);
  for (int i = 0; i < 5; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) {
      P(i, j) = 0.05 + rng.uniform();
      s += P(i, j);
    }
    P.row(i) /= s;
  }
  Eigen::VectorXd pi = salab::stationary_distribution(P);
  CHECK((pi.transpose() * P - pi.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(pi.sum() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(pi.minCoeff() > 0.0);
}

TEST_CASE("non-ergodic chains are rejected") {
  CHECK_THROWS_WITH_AS(salab::stationary_distribution(Eigen::MatrixXd::Identity(2, 2)),
                       doctest::Contains("ergodicity"), std::runtime_error);
  Eigen::MatrixXd flip(2, 2);
  flip << 0, 1, 1, 0;  // period two, P^n never strictly positive
  CHECK_THROWS_AS(salab::stationary_distribution(flip), std::runtime_error);
}

TEST_CASE("clipped AR step applies the recursion then clips") {
  salab::ClippedARKernel k(
      0.8, [](const Eigen::VectorXd& t) { return 0.1 * t[0]; },
      [](const Eigen::VectorXd&) { return 0.5; }, 2.0);
  double z = 0.7;
  StepDraws d;
  d.gauss = &z;
  salab::ClippedARKernel::Workspace ws(k);
  double x = k.advance(theta1(1.0), 0.5, d, ws);
  CHECK(x == doctest::Approx(0.8 * 0.5 + 0.1 + 0.5 * 0.7).epsilon(1e-15));

  z = 100.0;  // forces the clip
  CHECK(k.advance(theta1(0.0), 0.0, d, ws) == 2.0);
  z = -100.0;
  CHECK(k.advance(theta1(0.0), 0.0, d, ws) == -2.0);
}

TEST_CASE("projected langevin stays in the box") {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(2, -1.0);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(2, 1.0);
  salab::ProjectedLangevinKernel k(
      0.05,
      [](const Eigen::VectorXd& x, const Eigen::VectorXd&, Eigen::VectorXd& g) { g = x; },
      lo, hi);
  salab::ProjectedLangevinKernel::Workspace ws(k);
  RngStream rng(8);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  std::vector<double> g(2);
  StepDraws d;
  d.gauss = g.data();
  for (int i = 0; i < 2000; ++i) {
    rng.fill_gauss(g.data(), 2);
    x = k.advance(theta1(0.0), x, d, ws);
    REQUIRE(x.minCoeff() >= -1.0);
    REQUIRE(x.maxCoeff() <= 1.0);
  }
}

TEST_CASE("metropolis-hastings accepts and rejects by the potential difference") {
  // U(x) = x^2 / 2; from x = 2 a proposal toward 0 is always accepted
  salab::MHKernel k([](double x, const Eigen::VectorXd&) { return 0.5 * x * x; }, 1.0);
  salab::MHKernel::Workspace ws(k);
  double u = 0.999999, z = -1.0;
  StepDraws d;
  d.uniform = &u;
  d.gauss = &z;
  CHECK(k.advance(theta1(0.0), 2.0, d, ws) == doctest::Approx(1.0));

  // uphill proposal with an unlucky uniform is rejected
  z = 3.0;
  u = 0.999999;
  CHECK(k.advance(theta1(0.0), 0.0, d, ws) == 0.0);
  // same proposal with a kind uniform is accepted
  u = 1e-12;
  CHECK(k.advance(theta1(0.0), 0.0, d, ws) == 3.0);
}

TEST_CASE("metropolis-hastings chain reproduces a gaussian target") {
  salab::MHKernel k([](double x, const Eigen::VectorXd&) { return 0.5 * x * x; }, 1.5);
  salab::MHKernel::Workspace ws(k);
  RngStream rng(77);
  double u, z, x = 0.0;
  StepDraws d;
  d.uniform = &u;
  d.gauss = &z;
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    u = rng.uniform();
    z = rng.gauss();
    x = k.advance(theta1(0.0), x, d, ws);
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("one-step contraction estimate matches the two-state coupling rate") {
  // decision-independent rows (a = 0.3, b = 0.2): under the shared-uniform
  // inverse-CDF coupling two chains started apart land apart with probability
  // |1 - a - b| = 0.5, so the mean-square one-step ratio is 0.5 and
  // rho_hat = 1 - sqrt(0.5) up to sampling noise in the worst pair
  Finite2Params p;
  p.a0 = 0.3;
  p.a1 = 0.0;
  p.b0 = 0.2;
  p.b1 = 0.0;
  FiniteKernel k = FiniteKernel::finite2(p);
  salab::KernelDiagnostics diag =
      salab::estimate_contraction(k, theta1(0.0), 64, 4096, 2021);
  CHECK(diag.n_pairs > 10);
  CHECK(diag.rho_hat == doctest::Approx(1.0 - std::sqrt(0.5)).epsilon(0.06));
  CHECK(diag.ci_width > 0.0);
}

TEST_CASE("theta sensitivity is zero exactly when the kernel ignores theta") {
  Finite2Params p;
  p.a1 = 0.0;
  p.b1 = 0.0;
  FiniteKernel k = FiniteKernel::finite2(p);
  salab::KernelDiagnostics diag =
      salab::estimate_sensitivity(k, theta1(0.0), theta1(1.0), 32, 256, 5);
  CHECK(diag.lp_hat == 0.0);
}

TEST_CASE("theta sensitivity is positive for a responsive kernel") {
  Finite2Params p;
  p.a1 = 0.3;
  p.b1 = 0.3;
  FiniteKernel k = FiniteKernel::finite2(p);
  salab::KernelDiagnostics diag =
      salab::estimate_sensitivity(k, theta1(-0.5), theta1(0.5), 32, 256, 5);
  CHECK(diag.lp_hat > 0.0);
}

TEST_CASE("diagnostic argument validation") {
  FiniteKernel k = FiniteKernel::finite2({});
  CHECK_THROWS_AS(salab::estimate_contraction(k, theta1(0.0), 0, 8, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(salab::estimate_sensitivity(k, theta1(0.0), theta1(0.0), 8, 8, 1),
                  std::invalid_argument);
}
