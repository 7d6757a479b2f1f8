#include "doctest.h"

#include <cmath>
#include <vector>

#include "salab/rng.hpp"
#include "salab/stats.hpp"

using salab::RngStream;

TEST_CASE("streams with the same derivation path are identical") {
  RngStream a = RngStream::split(42, 7, 3);
  RngStream b = RngStream::split(42, 7, 3);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derivation is sensitive to path order and arity") {
  std::uint64_t base = RngStream::derive(42);
  CHECK(RngStream::derive(42, 0, 1) != RngStream::derive(42, 1, 0));
  CHECK(RngStream::derive(42, 0) != RngStream::derive(42, 0, 0));
  CHECK(RngStream::derive(42, 5) != base);
  CHECK(RngStream::derive(43) != base);
}

TEST_CASE("uniform draws stay strictly inside (0,1)") {
  RngStream s(123);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = s.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
  // mean of n uniforms has sd 1/sqrt(12 n); allow five of those
  CHECK(std::abs(sum / n - 0.5) < 5.0 / std::sqrt(12.0 * n));
}

TEST_CASE("gauss consumes exactly two uniforms and matches the transform") {
  RngStream a(99), b(99);
  double u1 = b.uniform();
  double u2 = b.uniform();
  double expected = std::sqrt(-2.0 * std::log(u1)) *
                    std::cos(6.283185307179586476925286766559 * u2);
  CHECK(a.gauss() == expected);
  // both streams must now be in the same position
  CHECK(a.uniform() == b.uniform());
}

TEST_CASE("gauss moments look standard normal") {
  RngStream s(2024);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0, m4 = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = s.gauss();
    m1 += z;
    m2 += z * z;
    m4 += z * z * z * z;
  }
  m1 /= n;
  m2 /= n;
  m4 /= n;
  CHECK(std::abs(m1) < 5.0 / std::sqrt(static_cast<double>(n)));
  CHECK(m2 == doctest::Approx(1.0).epsilon(0.02));
  CHECK(m4 == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("fill_gauss matches repeated single draws") {
  RngStream a(7), b(7);
  double buf[5];
  a.fill_gauss(buf, 5);
  for (int i = 0; i < 5; ++i) CHECK(buf[i] == b.gauss());
}

TEST_CASE("fit_line recovers an exact line") {
  std::vector<double> x = {-2.0, -1.0, 0.5, 1.0, 3.0};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 - 2.0 * v);
  salab::LineFit f = salab::fit_line(x, y);
  CHECK(f.slope == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(f.intercept == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(f.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.n == 5);
}

TEST_CASE("weights steer the fit toward low-variance points") {
  // two clusters of points disagree about the line; weights pick cluster one
  std::vector<double> x = {0.0, 1.0, 2.0, 0.0, 1.0, 2.0};
  std::vector<double> y = {0.0, 1.0, 2.0, 5.0, 5.0, 5.0};
  std::vector<double> w = {1e6, 1e6, 1e6, 1.0, 1.0, 1.0};
  salab::LineFit f = salab::fit_line_weighted(x, y, w);
  CHECK(f.slope == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(f.intercept == doctest::Approx(0.0).epsilon(1e-2));
}

TEST_CASE("slope_stderr is positive for scattered data") {
  std::vector<double> x = {0, 1, 2, 3, 4, 5};
  std::vector<double> y = {0.1, 0.9, 2.2, 2.8, 4.3, 4.9};
  salab::LineFit f = salab::fit_line(x, y);
  CHECK(f.slope_stderr > 0.0);
  CHECK(f.r_squared > 0.95);
}

// Reference quantiles computed independently with a regularized
// incomplete-gamma series/continued-fraction evaluation and bisection.
TEST_CASE("chi-square quantiles match reference values") {
  CHECK(salab::chi_square_quantile(0.95, 1) ==
        doctest::Approx(3.841458820694124).epsilon(1e-9));
  CHECK(salab::chi_square_quantile(0.95, 2) ==
        doctest::Approx(5.991464547107977).epsilon(1e-9));
  CHECK(salab::chi_square_quantile(0.95, 5) ==
        doctest::Approx(11.070497693516348).epsilon(1e-9));
  CHECK(salab::chi_square_quantile(0.99, 1) ==
        doctest::Approx(6.634896601021202).epsilon(1e-9));
}

TEST_CASE("gamma_p agrees with closed forms") {
  // P(1/2, x) = erf(sqrt(x)) and P(1, x) = 1 - exp(-x)
  for (double x : {0.25, 0.5, 1.0, 2.0, 5.0}) {
    CHECK(salab::gamma_p(0.5, x) == doctest::Approx(std::erf(std::sqrt(x))).epsilon(1e-12));
    CHECK(salab::gamma_p(1.0, x) == doctest::Approx(1.0 - std::exp(-x)).epsilon(1e-12));
  }
  CHECK(salab::gamma_p(0.5, 0.0) == 0.0);
}

TEST_CASE("quantile inverts gamma_p") {
  double q = salab::chi_square_quantile(0.9, 3);
  CHECK(salab::gamma_p(1.5, q / 2.0) == doctest::Approx(0.9).epsilon(1e-10));
}
