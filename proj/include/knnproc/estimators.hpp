#pragma once

#include <Eigen/Dense>
#include <span>

#include "knnproc/measure.hpp"

namespace knnproc {

// Least-squares fit of y on (1, x - center) under the k-NN measure. The
// Gram matrix is G = mu{a a^T} with a(X) = (1, (X-x)^T)^T; the solution is
// the minimum-norm one through the pseudo-inverse, and the reported
// covariance is sigma2 * G^+ (the asymptotic covariance of the
// sqrt(k)-normalized estimator).
struct LocalLinearFit {
  double alpha = 0;     // fitted value at the query point
  Eigen::VectorXd beta; // fitted slope, length d
  Eigen::MatrixXd gram;
  Eigen::MatrixXd gram_pinv;
  Eigen::MatrixXd variance;  // sigma2 * gram_pinv
  double variance_scale = 0;
  bool rank_deficient = false;
};

struct ConfidenceInterval {
  double center = 0;
  double half_width = 0;
  double level = 0;
  bool variance_clamped = false;  // plug-in variance came out negative
};

double knn_regression(const SampleSet& sample, std::span<const double> x, int k,
                      const Norm& norm);
double knn_regression(const SampleSet& sample, std::span<const double> x, int k);

// sigma2 is the (known) conditional residual variance at x. Rank-deficient
// Gram matrices are not an error: eigenvalues below 1e-12 times the largest
// are zeroed in the pseudo-inverse and the fit is flagged.
LocalLinearFit local_linear_fit(const SampleSet& sample, std::span<const double> x, int k,
                                double sigma2, const Norm& norm, bool intercept_only = false);
LocalLinearFit local_linear_fit(const SampleSet& sample, std::span<const double> x, int k,
                                double sigma2);

// Normal-approximation interval for mu(g): center mu(g), half width
// z_{(1+level)/2} sqrt(cov(g,g)/k) with the plug-in covariance. The bias of
// the local average is ignored, which is justified when k grows slowly
// enough that k^{(d+2)/2}/n -> 0.
ConfidenceInterval functional_ci(const KnnMeasure& measure, const Functional& g, double level);
ConfidenceInterval functional_ci(const SampleSet& sample, std::span<const double> x, int k,
                                 const Functional& g, double level, const Norm& norm);
ConfidenceInterval functional_ci(const SampleSet& sample, std::span<const double> x, int k,
                                 const Functional& g, double level);

// Pseudo-inverse of a symmetric PSD matrix by eigendecomposition;
// eigenvalues below 1e-12 * max are treated as zero. rank_deficient is set
// when any are dropped.
Eigen::MatrixXd symmetric_pseudo_inverse(const Eigen::MatrixXd& m, bool* rank_deficient);

}  // namespace knnproc
