#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knnproc/geometry.hpp"

namespace knnproc {

struct GroundTruth;

// A real-valued test function on the response space, with an optional
// envelope bound sup |g|.
struct Functional {
  std::string id;
  std::function<double(std::span<const double>)> eval;
  std::optional<double> envelope;
};

// Known ids: "identity" (alias "mean"), "square", "const" (alias "one"),
// "cdf:<t>" for the indicator 1{y <= t}, "coord:<j>" for vector responses.
Functional make_functional(const std::string& id);

// The i.i.d. sample: covariates with their spatial index, plus responses
// (scalar by default, fixed-length vectors otherwise). Immutable once built.
struct SampleSet {
  PointCloud covariates;
  std::vector<double> responses;  // n x response_dim, row major
  int response_dim = 1;

  int size() const { return covariates.size(); }
  int dim() const { return covariates.dim(); }
  std::span<const double> response(int i) const {
    return {responses.data() + static_cast<std::size_t>(i) * response_dim,
            static_cast<std::size_t>(response_dim)};
  }
  double scalar_response(int i) const;
  void validate() const;
};

// Discrete measure with mass 1/k on each response whose covariate lies in
// the closed k-NN ball. Ties on the boundary stay in, so the total mass is
// |in_ball|/k and can exceed 1; no renormalization is applied.
struct KnnMeasure {
  const SampleSet* sample = nullptr;
  std::vector<double> x;
  int k = 0;
  Norm norm;
  NeighborQuery query;

  double mass() const { return static_cast<double>(query.in_ball.size()) / k; }
  double weight(int i) const {
    return std::binary_search(query.in_ball.begin(), query.in_ball.end(), i) ? 1.0 / k : 0.0;
  }
};

// Fixed-bandwidth counterpart: indicator weights normalized by the in-ball
// count.
struct NwMeasure {
  const SampleSet* sample = nullptr;
  std::vector<double> x;
  double bandwidth = 0;
  Norm norm;
  std::vector<int> in_ball;
};

KnnMeasure knn_measure(const SampleSet& sample, std::span<const double> x, int k,
                       const Norm& norm);
KnnMeasure knn_measure(const SampleSet& sample, std::span<const double> x, int k);

// Throws EmptyBallError when no covariate falls within tau of x.
NwMeasure nw_measure(const SampleSet& sample, std::span<const double> x, double tau,
                     const Norm& norm);
NwMeasure nw_measure(const SampleSet& sample, std::span<const double> x, double tau);

// sum_i w_i g(Y_i). Throws NumericError (with the offending sample index)
// when g evaluates to a non-finite value.
double integrate(const KnnMeasure& measure, const Functional& g);
double integrate(const NwMeasure& measure, const Functional& g);

// F_k(y|x): right-continuous nondecreasing step function of y with total
// mass |in_ball|/k. Scalar responses only.
double conditional_cdf(const KnnMeasure& measure, double y);

// Generalized inverse inf{y : F_k(y|x) >= u}; equals an order statistic of
// the in-ball responses. u must lie in (0,1).
double conditional_quantile(const KnnMeasure& measure, double u);

// Plug-in conditional covariance mu(g1 g2) - mu(g1) mu(g2).
double empirical_conditional_cov(const KnnMeasure& measure, const Functional& g1,
                                 const Functional& g2);

// Grid approximation of sup_{z in B(x,tau)} |mu_x(g) - mu_z(g)| for models
// with analytic conditional means. Maximizes over a deterministic set of
// grid_points points in the ball (axis endpoints always included), so the
// value is a lower bound of the true supremum.
double modulus_of_continuity(const GroundTruth& truth, const Functional& g,
                             std::span<const double> x, double tau, int grid_points);

}  // namespace knnproc
