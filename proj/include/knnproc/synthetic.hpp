#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "knnproc/measure.hpp"

namespace knnproc {

// Identifies one reproducible random stream. Identical (seed, replication)
// always yields identical draws, bit for bit, on any worker count.
struct RngSpec {
  std::uint64_t seed = 0;
  std::uint64_t replication = 0;
};

// Counter-based generator: output i is a SplitMix64-style hash of
// (key, counter), so draws are addressable and order-independent.
class CounterRng {
 public:
  explicit CounterRng(const RngSpec& spec);
  std::uint64_t bits(std::uint64_t counter) const;
  double uniform(std::uint64_t counter) const;  // strictly inside (0,1)
  double gaussian(std::uint64_t counter) const;

 private:
  std::uint64_t key_;
};

enum class NoiseKind { gaussian, uniform };

// Base noise law; the draw is m(x) + scale(x) * eps with eps ~ law.
struct NoiseLaw {
  NoiseKind kind = NoiseKind::gaussian;
  double sigma = 1.0;  // gaussian standard deviation
  double a = -1.0;     // uniform support
  double b = 1.0;
};

// Marginal density of one covariate coordinate: constant on [lo, hi], or
// two constant pieces split at `split`. Sampling is by inverse CDF.
struct CoordinateDensity {
  double lo = 0.0, hi = 1.0;
  bool two_piece = false;
  double split = 0.5;
  double f1 = 1.0, f2 = 1.0;

  double value(double z) const;
  double sample(double u) const;
};

// A synthetic model with fully analytic ground truth: density, regression,
// conditional means/covariances for the registered functionals, and the
// regularity constants of its support.
struct GroundTruth {
  std::string id;
  int dim = 1;
  std::vector<CoordinateDensity> marginals;  // product density over [lo,hi]^d
  NoiseLaw noise;

  double density_lower = 1.0;    // b_X
  double density_upper = 1.0;    // U_X
  double support_c = 0.5;        // c in the support-regularity condition
  double support_horizon = 0.5;  // T, radius cap for that condition

  double density(std::span<const double> z) const;  // 0 outside the support
  double regression(std::span<const double> z) const;
  double noise_sd(std::span<const double> z) const;  // sd of Y - m(z) given X = z

  // Analytic conditional quantities; throw UnsupportedError for functionals
  // outside the registry.
  double cond_mean(const Functional& g, std::span<const double> z) const;
  double cond_cov(const Functional& g1, const Functional& g2, std::span<const double> z) const;

  // Uniform Lipschitz constant of z -> mu_z(g) for a functional class,
  // keyed "identity", "square", "cdf", "const".
  double lipschitz(const std::string& class_key) const;
  // sup over the class and the support of Var(g(Y)|X=x).
  double sup_cond_variance(const std::string& class_key) const;

  std::pair<double, double> support_interval(int j) const;
  bool in_support(std::span<const double> z) const;

  // model internals
  enum class MeanKind { zero, linear_1d, sine_1d, affine };
  MeanKind mean_kind = MeanKind::zero;
  double mean_a = 0.0, mean_b = 0.0;  // affine: a + b * z_1
  bool heteroscedastic = false;
  double scale_a = 1.0, scale_b = 0.0;  // noise scale a + b * z_1
};

// "cdf:0.3" -> "cdf", "mean" -> "identity"; the key the Lipschitz and
// variance registries are indexed by.
std::string functional_class_key(const std::string& functional_id);

// Registered models:
//   m1        X ~ U[0,1], Y = sin(2 pi x) + N(0, 0.25)
//   m1_d2     the d=2 version (regression depends on the first coordinate)
//   m2        two-level density f in {0.25, 1.75} on [0,1], same regression
//   m3        heteroscedastic: Y = 2 + 3x + (0.25 + 0.5x) N(0,1)
//   m4_const  Y independent of X ~ U[0,1]: constant conditional law
//   linear    Y = x + N(0, 0.0625): mu_z(identity) = z
//   m5_unif   uniform response noise on [-0.5, 0.5]
GroundTruth make_model(const std::string& id);
std::vector<GroundTruth> model_catalog();

SampleSet draw_sample(const GroundTruth& truth, int n, const RngSpec& rng);

// One response draw at covariate z, lanes >= dim of the sample stride.
double draw_response(const GroundTruth& truth, std::span<const double> z, const CounterRng& rng,
                     std::uint64_t counter);

// CSV with header x_1,...,x_d,y (or y_1..y_m for vector responses).
void write_sample_csv(const SampleSet& sample, std::ostream& out);
SampleSet read_sample_csv(std::istream& in);

}  // namespace knnproc
