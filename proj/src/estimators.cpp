#include "knnproc/estimators.hpp"

#include <cmath>
#include <stdexcept>

#include "knnproc/mathstats.hpp"

namespace knnproc {

namespace {

Norm default_norm(const SampleSet& sample) { return {NormKind::euclidean, sample.dim()}; }

}  // namespace

double knn_regression(const SampleSet& sample, std::span<const double> x, int k,
                      const Norm& norm) {
  const KnnMeasure m = knn_measure(sample, x, k, norm);
  return integrate(m, make_functional("identity"));
}

double knn_regression(const SampleSet& sample, std::span<const double> x, int k) {
  return knn_regression(sample, x, k, default_norm(sample));
}

Eigen::MatrixXd symmetric_pseudo_inverse(const Eigen::MatrixXd& m, bool* rank_deficient) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  const Eigen::VectorXd& ev = solver.eigenvalues();
  const double cutoff = 1e-12 * ev.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  bool dropped = false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > cutoff)
      inv[i] = 1.0 / ev[i];
    else
      dropped = true;
  }
  if (rank_deficient) *rank_deficient = dropped;
  return solver.eigenvectors() * inv.asDiagonal() * solver.eigenvectors().transpose();
}

LocalLinearFit local_linear_fit(const SampleSet& sample, std::span<const double> x, int k,
                                double sigma2, const Norm& norm, bool intercept_only) {
  if (sample.response_dim != 1) throw std::invalid_argument("scalar responses required");
  if (!(sigma2 >= 0)) throw std::invalid_argument("sigma2 must be nonnegative");

  const KnnMeasure measure = knn_measure(sample, x, k, norm);
  const int d = intercept_only ? 0 : sample.dim();
  const int p = d + 1;

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd a(p);
  for (int i : measure.query.in_ball) {
    a[0] = 1.0;
    const auto xi = sample.covariates.point(i);
    for (int j = 0; j < d; ++j) a[j + 1] = xi[j] - x[j];
    gram.noalias() += a * a.transpose();
    rhs.noalias() += a * sample.scalar_response(i);
  }
  gram /= k;
  rhs /= k;

  LocalLinearFit fit;
  fit.gram = gram;
  fit.gram_pinv = symmetric_pseudo_inverse(gram, &fit.rank_deficient);
  const Eigen::VectorXd theta = fit.gram_pinv * rhs;
  fit.alpha = theta[0];
  fit.beta = Eigen::VectorXd::Zero(sample.dim());
  for (int j = 0; j < d; ++j) fit.beta[j] = theta[j + 1];
  fit.variance_scale = sigma2;
  fit.variance = sigma2 * fit.gram_pinv;
  return fit;
}

LocalLinearFit local_linear_fit(const SampleSet& sample, std::span<const double> x, int k,
                                double sigma2) {
  return local_linear_fit(sample, x, k, sigma2, default_norm(sample), false);
}

ConfidenceInterval functional_ci(const KnnMeasure& measure, const Functional& g, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must be in (0,1)");
  ConfidenceInterval ci;
  ci.level = level;
  ci.center = integrate(measure, g);
  double var = empirical_conditional_cov(measure, g, g);
  if (var < 0) {  // possible when boundary ties push the mass above 1
    var = 0;
    ci.variance_clamped = true;
  }
  ci.half_width = normal_quantile(0.5 * (1.0 + level)) * std::sqrt(var / measure.k);
  return ci;
}

ConfidenceInterval functional_ci(const SampleSet& sample, std::span<const double> x, int k,
                                 const Functional& g, double level, const Norm& norm) {
  return functional_ci(knn_measure(sample, x, k, norm), g, level);
}

ConfidenceInterval functional_ci(const SampleSet& sample, std::span<const double> x, int k,
                                 const Functional& g, double level) {
  return functional_ci(sample, x, k, g, level, default_norm(sample));
}

}  // namespace knnproc
