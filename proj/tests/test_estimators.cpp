#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "knnproc/estimators.hpp"
#include "knnproc/mathstats.hpp"
#include "knnproc/synthetic.hpp"

using namespace knnproc;

namespace {

SampleSet linear_sample(std::mt19937_64& gen, int n, int d, double a, double b) {
  std::uniform_real_distribution<double> unif(-1, 1);
  std::vector<double> xs(static_cast<std::size_t>(n) * d), ys(static_cast<std::size_t>(n));
  for (auto& v : xs) v = unif(gen);
  for (int i = 0; i < n; ++i) {
    double dot = 0;
    for (int j = 0; j < d; ++j) dot += xs[static_cast<std::size_t>(i) * d + j];
    ys[static_cast<std::size_t>(i)] = a + b * dot;
  }
  return SampleSet{PointCloud(std::move(xs), d), std::move(ys), 1};
}

double loclin_objective(const SampleSet& s, const KnnMeasure& m, std::span<const double> x,
                        double alpha, std::span<const double> beta) {
  double total = 0;
  for (int i : m.query.in_ball) {
    double pred = alpha;
    const auto xi = s.covariates.point(i);
    for (std::size_t j = 0; j < beta.size(); ++j) pred += beta[j] * (xi[j] - x[j]);
    const double r = s.scalar_response(i) - pred;
    total += r * r;
  }
  return total / m.k;
}

}  // namespace

TEST_CASE("knn regression basics") {
  SampleSet constant{PointCloud({0, 1, 2, 3}, 1), {7, 7, 7, 7}, 1};
  CHECK(knn_regression(constant, std::vector<double>{1.2}, 3) == 7.0);

  SampleSet tiny{PointCloud({0, 1, 2}, 1), {10, 20, 30}, 1};
  CHECK(knn_regression(tiny, std::vector<double>{0.0}, 2) == 15.0);

  std::mt19937_64 gen(71);
  const SampleSet s = linear_sample(gen, 80, 1, 1.0, 2.0);
  const std::vector<double> x{0.25};
  const KnnMeasure m = knn_measure(s, x, 11);
  double by_hand = 0;
  for (int i : m.query.in_ball) by_hand += s.scalar_response(i);
  CHECK(knn_regression(s, x, 11) == doctest::Approx(by_hand / 11).epsilon(1e-15));
}

TEST_CASE("local linear fit interpolates exactly linear data") {
  std::mt19937_64 gen(73);
  const SampleSet s = linear_sample(gen, 60, 1, 2.0, 3.0);
  for (double x0 : {-0.5, 0.0, 0.4}) {
    const std::vector<double> x{x0};
    for (int k : {5, 20, 60}) {
      const LocalLinearFit fit = local_linear_fit(s, x, k, 0.0);
      CHECK(fit.alpha == doctest::Approx(2.0 + 3.0 * x0).epsilon(1e-10));
      CHECK(fit.beta[0] == doctest::Approx(3.0).epsilon(1e-10));
      CHECK_FALSE(fit.rank_deficient);
    }
  }
}

TEST_CASE("single neighbor at the query point is fitted by the intercept") {
  SampleSet s{PointCloud({0, 1, 2}, 1), {10, 20, 30}, 1};
  const std::vector<double> x{1.0};
  const LocalLinearFit fit = local_linear_fit(s, x, 1, 1.0);
  CHECK(fit.alpha == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(fit.beta[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(fit.rank_deficient);
}

TEST_CASE("single neighbor away from the query point: minimum-norm interpolation") {
  SampleSet s{PointCloud({0, 1, 2}, 1), {10, 20, 30}, 1};
  const std::vector<double> x{0.6};
  const LocalLinearFit fit = local_linear_fit(s, x, 1, 1.0);
  CHECK(fit.rank_deficient);
  // zero residual at the neighbor, and the solution lies along a(X_1)
  const double u = 1.0 - 0.6;
  CHECK(fit.alpha + fit.beta[0] * u == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(fit.beta[0] * 1.0 == doctest::Approx(fit.alpha * u).epsilon(1e-12));
}

TEST_CASE("fit beats random candidates") {
  std::mt19937_64 gen(79);
  std::uniform_real_distribution<double> unif(-1, 1);
  const int n = 100, d = 2;
  std::vector<double> xs(n * d), ys(n);
  for (auto& v : xs) v = unif(gen);
  for (int i = 0; i < n; ++i)
    ys[i] = std::sin(3 * xs[static_cast<std::size_t>(i) * d]) + 0.3 * unif(gen);
  const SampleSet s{PointCloud(std::move(xs), d), std::move(ys), 1};
  const std::vector<double> x{0.1, -0.3};
  const KnnMeasure m = knn_measure(s, x, 25);
  const LocalLinearFit fit = local_linear_fit(s, x, 25, 1.0);
  const double best = loclin_objective(s, m, x, fit.alpha, std::vector<double>{fit.beta[0], fit.beta[1]});
  std::normal_distribution<double> cand(0, 2);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::vector<double> beta{cand(gen), cand(gen)};
    CHECK(best <= loclin_objective(s, m, x, cand(gen), beta) + 1e-12);
  }
}

TEST_CASE("gram identity and pseudo-inverse consistency") {
  std::mt19937_64 gen(83);
  const SampleSet s = linear_sample(gen, 90, 2, 0.5, -1.0);
  const std::vector<double> x{0.0, 0.0};
  const int k = 30;
  const LocalLinearFit fit = local_linear_fit(s, x, k, 2.0);
  const KnnMeasure m = knn_measure(s, x, k);

  CHECK(fit.gram(0, 0) == doctest::Approx(m.mass()).epsilon(1e-15));
  for (int j = 0; j < 2; ++j) {
    double mean_dev = 0;
    for (int i : m.query.in_ball) mean_dev += s.covariates.point(i)[j] - x[j];
    mean_dev /= k;
    CHECK(fit.gram(0, j + 1) == doctest::Approx(mean_dev).epsilon(1e-12));
    CHECK(fit.gram(j + 1, 0) == doctest::Approx(mean_dev).epsilon(1e-12));
  }

  const Eigen::MatrixXd reconstructed = fit.gram * fit.gram_pinv * fit.gram;
  CHECK((reconstructed - fit.gram).norm() <= 1e-8 * fit.gram.norm());
  CHECK((fit.variance - 2.0 * fit.gram_pinv).norm() == 0.0);
}

TEST_CASE("intercept-only fit reproduces knn regression") {
  std::mt19937_64 gen(89);
  const SampleSet s = linear_sample(gen, 70, 1, 1.5, 0.5);
  const std::vector<double> x{0.2};
  const LocalLinearFit fit =
      local_linear_fit(s, x, 21, 0.0, make_norm("euclidean", 1), /*intercept_only=*/true);
  CHECK(fit.alpha == doctest::Approx(knn_regression(s, x, 21)).epsilon(1e-15));
  CHECK(fit.beta[0] == 0.0);
}

TEST_CASE("affine response change maps the fit affinely") {
  std::mt19937_64 gen(97);
  std::uniform_real_distribution<double> unif(-1, 1);
  const int n = 80;
  std::vector<double> xs(n), ys(n);
  for (auto& v : xs) v = unif(gen);
  for (int i = 0; i < n; ++i) ys[i] = std::cos(2 * xs[i]) + 0.2 * unif(gen);
  std::vector<double> ys2(n);
  const double a = -2.0, b = 5.0;
  for (int i = 0; i < n; ++i) ys2[i] = a * ys[i] + b;
  std::vector<double> xs2 = xs;

  const SampleSet s1{PointCloud(std::move(xs), 1), std::move(ys), 1};
  const SampleSet s2{PointCloud(std::move(xs2), 1), std::move(ys2), 1};
  const std::vector<double> x{0.3};
  const LocalLinearFit f1 = local_linear_fit(s1, x, 19, 1.0);
  const LocalLinearFit f2 = local_linear_fit(s2, x, 19, 1.0);
  CHECK(f2.alpha == doctest::Approx(a * f1.alpha + b).epsilon(1e-10));
  CHECK(f2.beta[0] == doctest::Approx(a * f1.beta[0]).epsilon(1e-10));
}

TEST_CASE("confidence interval arithmetic") {
  SampleSet s{PointCloud({0, 1}, 1), {10, 20}, 1};
  const std::vector<double> x{0.5};

  const ConfidenceInterval flat = functional_ci(s, x, 2, make_functional("const"), 0.9);
  CHECK(flat.half_width == 0.0);
  CHECK(flat.center == 1.0);

  // estimated variance 25 with k = 100 at level 95%:
  // z_{0.975} * sqrt(25/100) from an independent high-precision quantile
  SampleSet big{PointCloud([] {
                  std::vector<double> pts(100);
                  for (int i = 0; i < 100; ++i) pts[i] = i;
                  return pts;
                }(),
                           1),
                [] {
                  std::vector<double> ys(100);
                  for (int i = 0; i < 100; ++i) ys[i] = (i % 2 == 0) ? 10.0 : 20.0;
                  return ys;
                }(),
                1};
  const KnnMeasure m = knn_measure(big, std::vector<double>{49.5}, 100);
  const Functional id = make_functional("identity");
  CHECK(empirical_conditional_cov(m, id, id) == doctest::Approx(25.0).epsilon(1e-12));
  const ConfidenceInterval ci = functional_ci(m, id, 0.95);
  CHECK(std::abs(ci.half_width - 0.979981992270027) < 1e-8);
  CHECK_FALSE(ci.variance_clamped);
  CHECK_THROWS_AS(functional_ci(m, id, 0.0), std::invalid_argument);
}

TEST_CASE("half width follows the plug-in formula exactly") {
  std::mt19937_64 gen(101);
  const SampleSet s = linear_sample(gen, 200, 1, 0.0, 1.0);
  const std::vector<double> x{0.0};
  const Functional id = make_functional("identity");
  const double z = normal_quantile(0.5 * (1.0 + 0.95));
  for (int k : {10, 40, 160}) {
    const KnnMeasure m = knn_measure(s, x, k);
    const double var = empirical_conditional_cov(m, id, id);
    const ConfidenceInterval ci = functional_ci(m, id, 0.95);
    // exact 1/sqrt(k) scaling for a fixed variance estimate
    CHECK(ci.half_width == z * std::sqrt(var / k));
  }
}
