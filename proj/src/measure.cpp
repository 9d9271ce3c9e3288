#include "knnproc/measure.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "knnproc/errors.hpp"
#include "knnproc/synthetic.hpp"

namespace knnproc {

namespace {

Norm default_norm(const SampleSet& sample) { return {NormKind::euclidean, sample.dim()}; }

double eval_checked(const Functional& g, const SampleSet& sample, int i) {
  const double v = g.eval(sample.response(i));
  if (!std::isfinite(v))
    throw NumericError("functional '" + g.id + "' is non-finite at sample index " +
                           std::to_string(i),
                       i);
  return v;
}

}  // namespace

Functional make_functional(const std::string& id) {
  if (id == "identity" || id == "mean")
    return {id, [](std::span<const double> y) { return y[0]; }, std::nullopt};
  if (id == "square")
    return {id, [](std::span<const double> y) { return y[0] * y[0]; }, std::nullopt};
  if (id == "const" || id == "one")
    return {id, [](std::span<const double>) { return 1.0; }, 1.0};
  if (id.rfind("cdf:", 0) == 0) {
    const double t = std::stod(id.substr(4));
    return {id, [t](std::span<const double> y) { return y[0] <= t ? 1.0 : 0.0; }, 1.0};
  }
  if (id.rfind("coord:", 0) == 0) {
    const int j = std::stoi(id.substr(6));
    if (j < 0) throw std::invalid_argument("coord functional index must be nonnegative");
    return {id, [j](std::span<const double> y) { return y[static_cast<std::size_t>(j)]; },
            std::nullopt};
  }
  throw std::invalid_argument("unknown functional id: " + id);
}

double SampleSet::scalar_response(int i) const {
  if (response_dim != 1) throw std::invalid_argument("scalar responses required");
  return responses[static_cast<std::size_t>(i)];
}

void SampleSet::validate() const {
  if (response_dim < 1) throw std::invalid_argument("response dimension must be positive");
  if (responses.size() != static_cast<std::size_t>(size()) * response_dim)
    throw std::invalid_argument("covariate count does not match response count");
}

KnnMeasure knn_measure(const SampleSet& sample, std::span<const double> x, int k,
                       const Norm& norm) {
  sample.validate();
  KnnMeasure m;
  m.sample = &sample;
  m.x.assign(x.begin(), x.end());
  m.k = k;
  m.norm = norm;
  m.query = knn_radius(sample.covariates, x, k, norm);
  return m;
}

KnnMeasure knn_measure(const SampleSet& sample, std::span<const double> x, int k) {
  return knn_measure(sample, x, k, default_norm(sample));
}

NwMeasure nw_measure(const SampleSet& sample, std::span<const double> x, double tau,
                     const Norm& norm) {
  sample.validate();
  if (!(tau > 0)) throw std::invalid_argument("bandwidth must be positive");
  NwMeasure m;
  m.sample = &sample;
  m.x.assign(x.begin(), x.end());
  m.bandwidth = tau;
  m.norm = norm;
  m.in_ball = ball_search(sample.covariates, x, tau, norm);
  if (m.in_ball.empty()) throw EmptyBallError("no sample point within the bandwidth ball");
  return m;
}

NwMeasure nw_measure(const SampleSet& sample, std::span<const double> x, double tau) {
  return nw_measure(sample, x, tau, default_norm(sample));
}

double integrate(const KnnMeasure& measure, const Functional& g) {
  double s = 0;
  for (int i : measure.query.in_ball) s += eval_checked(g, *measure.sample, i);
  return s / measure.k;
}

double integrate(const NwMeasure& measure, const Functional& g) {
  double s = 0;
  for (int i : measure.in_ball) s += eval_checked(g, *measure.sample, i);
  return s / static_cast<double>(measure.in_ball.size());
}

double conditional_cdf(const KnnMeasure& measure, double y) {
  const SampleSet& sample = *measure.sample;
  if (sample.response_dim != 1) throw std::invalid_argument("scalar responses required");
  int count = 0;
  for (int i : measure.query.in_ball)
    if (sample.scalar_response(i) <= y) ++count;
  return static_cast<double>(count) / measure.k;
}

double conditional_quantile(const KnnMeasure& measure, double u) {
  const SampleSet& sample = *measure.sample;
  if (sample.response_dim != 1) throw std::invalid_argument("scalar responses required");
  if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("quantile level must be in (0,1)");
  std::vector<double> ys;
  ys.reserve(measure.query.in_ball.size());
  for (int i : measure.query.in_ball) ys.push_back(sample.scalar_response(i));
  std::sort(ys.begin(), ys.end());
  // F jumps by 1/k at each sorted response; ties keep the total above 1, so
  // the target level u < 1 is always reached.
  for (std::size_t j = 0; j < ys.size(); ++j)
    if (static_cast<double>(j + 1) / measure.k >= u) return ys[j];
  return ys.back();
}

double empirical_conditional_cov(const KnnMeasure& measure, const Functional& g1,
                                 const Functional& g2) {
  double s1 = 0, s2 = 0, s12 = 0;
  for (int i : measure.query.in_ball) {
    const double a = eval_checked(g1, *measure.sample, i);
    const double b = eval_checked(g2, *measure.sample, i);
    s1 += a;
    s2 += b;
    s12 += a * b;
  }
  const double k = measure.k;
  return s12 / k - (s1 / k) * (s2 / k);
}

double modulus_of_continuity(const GroundTruth& truth, const Functional& g,
                             std::span<const double> x, double tau, int grid_points) {
  if (!(tau >= 0)) throw std::invalid_argument("tau must be nonnegative");
  if (grid_points < 2) throw std::invalid_argument("grid must have at least 2 points");
  if (static_cast<int>(x.size()) != truth.dim)
    throw std::invalid_argument("query point dimension does not match the model");
  if (tau == 0) return 0.0;

  const double center = truth.cond_mean(g, x);
  const int d = truth.dim;
  std::vector<double> z(x.begin(), x.end());
  double sup = 0;
  auto visit = [&](const std::vector<double>& point) {
    sup = std::max(sup, std::abs(center - truth.cond_mean(g, point)));
  };

  // Axis endpoints sit on the sphere for both norms; always probe them.
  for (int j = 0; j < d; ++j) {
    for (double sign : {-1.0, 1.0}) {
      z.assign(x.begin(), x.end());
      z[j] += sign * tau;
      visit(z);
    }
  }

  if (d == 1) {
    for (int i = 0; i < grid_points; ++i) {
      z[0] = x[0] - tau + 2.0 * tau * i / (grid_points - 1);
      visit(z);
    }
    return sup;
  }

  // Van der Corput / Halton points in the bounding cube, kept when inside
  // the (euclidean) ball.
  static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19};
  std::vector<double> offset(d);
  int kept = 0, index = 1;
  while (kept < grid_points && index < 64 * grid_points) {
    for (int j = 0; j < d; ++j) {
      const int base = primes[j % 8];
      double f = 1.0, r = 0.0;
      for (int i = index; i > 0; i /= base) {
        f /= base;
        r += f * (i % base);
      }
      offset[j] = (2.0 * r - 1.0) * tau;
    }
    ++index;
    double key = 0;
    for (double o : offset) key += o * o;
    if (std::sqrt(key) > tau) continue;
    for (int j = 0; j < d; ++j) z[j] = x[j] + offset[j];
    visit(z);
    ++kept;
  }
  return sup;
}

}  // namespace knnproc
