#pragma once

#include <cstddef>
#include <vector>

namespace salab {

// Weighted least-squares straight line y = intercept + slope * x.
// Weights are absolute (w_i = 1/var_i); pass 1.0 for an unweighted fit.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 0.0;
  int n = 0;
};

LineFit fit_line_weighted(const std::vector<double>& x,
                          const std::vector<double>& y,
                          const std::vector<double>& w);

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  return fit_line_weighted(x, y, std::vector<double>(x.size(), 1.0));
}

// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

// Quantile of the chi-square distribution with df degrees of freedom.
double chi_square_quantile(double p, int df);

}  // namespace salab
