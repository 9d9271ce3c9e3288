#pragma once

#include <span>
#include <vector>

namespace knnproc {

double normal_pdf(double z);

// Standard normal CDF via erfc; accurate to full double precision.
double normal_cdf(double z);

// Standard normal quantile, Wichura's algorithm AS 241 (PPND16).
// Absolute error below 1e-15 over (0,1); throws std::invalid_argument
// outside the open interval.
double normal_quantile(double p);

double mean(std::span<const double> xs);

// Unbiased (n-1) sample variance.
double sample_variance(std::span<const double> xs);

// Generalized inverse of the ECDF: inf{y : F_n(y) >= p}.
double sample_quantile(std::vector<double> xs, double p);

// sample_quantile at 1/2.
double median(std::vector<double> xs);

// Kolmogorov-Smirnov distance between the empirical law of zs and N(0,1).
double ks_distance_normal(std::vector<double> zs);

struct SlopeFit {
  double slope = 0;
  double intercept = 0;
  double slope_stderr = 0;
};

// Ordinary least squares of ys on xs; needs at least 3 points for a
// finite standard error.
SlopeFit least_squares_slope(std::span<const double> xs, std::span<const double> ys);

}  // namespace knnproc
