#include "knnproc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "knnproc/errors.hpp"
#include "knnproc/mathstats.hpp"

namespace knnproc {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer (Stafford mix 13).
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Lanes available per sample index; coordinates use lanes 0..d-1 and the
// response uses lane d.
constexpr std::uint64_t kLaneStride = 16;

double cdf_threshold(const Functional& g) { return std::stod(g.id.substr(g.id.find(':') + 1)); }

}  // namespace

std::string functional_class_key(const std::string& functional_id) {
  if (functional_id == "mean") return "identity";
  if (functional_id == "one") return "const";
  const auto colon = functional_id.find(':');
  return colon == std::string::npos ? functional_id : functional_id.substr(0, colon);
}

CounterRng::CounterRng(const RngSpec& spec)
    : key_(mix64(mix64(spec.seed + kGolden) + spec.replication + kGolden)) {}

std::uint64_t CounterRng::bits(std::uint64_t counter) const {
  return mix64(key_ + counter * kGolden);
}

double CounterRng::uniform(std::uint64_t counter) const {
  return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::gaussian(std::uint64_t counter) const {
  return normal_quantile(uniform(counter));
}

double CoordinateDensity::value(double z) const {
  if (z < lo || z > hi) return 0.0;
  if (!two_piece) return 1.0 / (hi - lo);
  return z < split ? f1 : f2;
}

double CoordinateDensity::sample(double u) const {
  if (!two_piece) return lo + (hi - lo) * u;
  const double mass1 = f1 * (split - lo);
  if (u < mass1) return lo + u / f1;
  return split + (u - mass1) / f2;
}

double GroundTruth::density(std::span<const double> z) const {
  double f = 1.0;
  for (int j = 0; j < dim; ++j) {
    f *= marginals[static_cast<std::size_t>(j)].value(z[j]);
    if (f == 0.0) return 0.0;
  }
  return f;
}

double GroundTruth::regression(std::span<const double> z) const {
  switch (mean_kind) {
    case MeanKind::zero:
      return 0.0;
    case MeanKind::linear_1d:
      return z[0];
    case MeanKind::sine_1d:
      return std::sin(2.0 * M_PI * z[0]);
    case MeanKind::affine:
      return mean_a + mean_b * z[0];
  }
  return 0.0;
}

double GroundTruth::noise_sd(std::span<const double> z) const {
  const double scale = heteroscedastic ? scale_a + scale_b * z[0] : scale_a;
  if (noise.kind == NoiseKind::gaussian) return scale * noise.sigma;
  return scale * (noise.b - noise.a) / std::sqrt(12.0);
}

double GroundTruth::cond_mean(const Functional& g, std::span<const double> z) const {
  const std::string key = functional_class_key(g.id);
  const double m = regression(z);
  if (key == "const") return 1.0;
  if (key == "identity") {
    if (noise.kind == NoiseKind::uniform && noise.a + noise.b != 0.0)
      throw UnsupportedError("identity mean needs symmetric uniform noise");
    return m;
  }
  const double scale = heteroscedastic ? scale_a + scale_b * z[0] : scale_a;
  if (key == "square") {
    if (noise.kind != NoiseKind::gaussian)
      throw UnsupportedError("square mean registered for gaussian noise only");
    const double s = scale * noise.sigma;
    return m * m + s * s;
  }
  if (key == "cdf") {
    const double t = cdf_threshold(g);
    if (noise.kind == NoiseKind::gaussian) return normal_cdf((t - m) / (scale * noise.sigma));
    const double u = ((t - m) / scale - noise.a) / (noise.b - noise.a);
    return std::clamp(u, 0.0, 1.0);
  }
  throw UnsupportedError("no analytic conditional mean for functional '" + g.id + "'");
}

double GroundTruth::cond_cov(const Functional& g1, const Functional& g2,
                             std::span<const double> z) const {
  std::string k1 = functional_class_key(g1.id), k2 = functional_class_key(g2.id);
  const Functional* f1 = &g1;
  const Functional* f2 = &g2;
  if (k1 > k2) {
    std::swap(k1, k2);
    std::swap(f1, f2);
  }
  if (k1 == "const" || k2 == "const") return 0.0;

  const double m = regression(z);
  const double scale = heteroscedastic ? scale_a + scale_b * z[0] : scale_a;

  if (noise.kind == NoiseKind::uniform) {
    const double s2 = noise_sd(z) * noise_sd(z);
    if (k1 == "identity" && k2 == "identity") return s2;
    if (k1 == "cdf" && k2 == "cdf") {
      const double fa = cond_mean(*f1, z), fb = cond_mean(*f2, z);
      return std::min(fa, fb) - fa * fb;
    }
    throw UnsupportedError("covariance pair not registered for uniform noise");
  }

  const double s = scale * noise.sigma;
  if (k1 == "identity" && k2 == "identity") return s * s;
  if (k1 == "square" && k2 == "square") return 4.0 * m * m * s * s + 2.0 * s * s * s * s;
  if (k1 == "identity" && k2 == "square") return 2.0 * m * s * s;
  if (k1 == "cdf" && k2 == "cdf") {
    const double pa = cond_mean(*f1, z), pb = cond_mean(*f2, z);
    return std::min(pa, pb) - pa * pb;
  }
  if (k1 == "cdf" && (k2 == "identity" || k2 == "square")) {
    const double alpha = (cdf_threshold(*f1) - m) / s;
    if (k2 == "identity") return -s * normal_pdf(alpha);
    return -(2.0 * m * s + s * s * alpha) * normal_pdf(alpha);
  }
  throw UnsupportedError("covariance pair (" + g1.id + ", " + g2.id + ") not registered");
}

double GroundTruth::lipschitz(const std::string& class_key) const {
  // Slope bound of z -> mu_z(g) over the class; zero-mean models are flat.
  if (class_key == "const") return 0.0;
  if (mean_kind == MeanKind::zero) return 0.0;

  double slope = 0.0;  // sup |dm/dz|
  switch (mean_kind) {
    case MeanKind::linear_1d:
      slope = 1.0;
      break;
    case MeanKind::sine_1d:
      slope = 2.0 * M_PI;
      break;
    case MeanKind::affine:
      slope = std::abs(mean_b);
      break;
    case MeanKind::zero:
      break;
  }
  if (class_key == "identity") return slope;

  if (noise.kind != NoiseKind::gaussian)
    throw UnsupportedError("lipschitz constant registered for gaussian noise only");
  const double s_min =
      heteroscedastic ? std::min(scale_a, scale_a + scale_b) * noise.sigma : scale_a * noise.sigma;
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  static const double sup_a_phi = 0.2419707245191433498;  // sup |a| phi(a), at |a| = 1
  if (class_key == "cdf") {
    double l = slope * inv_sqrt_2pi / s_min;
    if (heteroscedastic) {
      const double s_ratio = std::abs(scale_b) / std::min(scale_a, scale_a + scale_b);
      l += sup_a_phi * s_ratio;
    }
    return l;
  }
  if (class_key == "square") {
    double sup_m = 0.0;
    switch (mean_kind) {
      case MeanKind::linear_1d:
        sup_m = std::max(std::abs(support_interval(0).first), std::abs(support_interval(0).second));
        break;
      case MeanKind::sine_1d:
        sup_m = 1.0;
        break;
      case MeanKind::affine: {
        const auto [lo, hi] = support_interval(0);
        sup_m = std::max(std::abs(mean_a + mean_b * lo), std::abs(mean_a + mean_b * hi));
        break;
      }
      case MeanKind::zero:
        break;
    }
    double l = 2.0 * sup_m * slope;
    if (heteroscedastic) {
      const double s_max = std::max(scale_a, scale_a + scale_b) * noise.sigma;
      l += 2.0 * s_max * std::abs(scale_b) * noise.sigma;
    }
    return l;
  }
  throw UnsupportedError("no lipschitz constant for class '" + class_key + "'");
}

double GroundTruth::sup_cond_variance(const std::string& class_key) const {
  if (class_key == "const") return 0.0;
  if (class_key == "cdf") return 0.25;  // p(1-p) <= 1/4
  const double s_max = heteroscedastic
                           ? std::max(scale_a, scale_a + scale_b)
                           : scale_a;
  const double base = noise.kind == NoiseKind::gaussian
                          ? s_max * noise.sigma
                          : s_max * (noise.b - noise.a) / std::sqrt(12.0);
  if (class_key == "identity") return base * base;
  throw UnsupportedError("no variance bound for class '" + class_key + "'");
}

std::pair<double, double> GroundTruth::support_interval(int j) const {
  const auto& m = marginals[static_cast<std::size_t>(j)];
  return {m.lo, m.hi};
}

bool GroundTruth::in_support(std::span<const double> z) const { return density(z) > 0.0; }

GroundTruth make_model(const std::string& id) {
  GroundTruth t;
  t.id = id;
  t.noise = {NoiseKind::gaussian, 0.5, -1.0, 1.0};
  t.marginals = {CoordinateDensity{}};
  // Product-of-intervals support: the worst ball/support overlap is a
  // corner orthant, so c = 2^{-d} for radii up to half the side length.
  auto corner_constants = [&](int d) {
    t.support_c = std::pow(2.0, -d);
    t.support_horizon = 0.5;
  };

  if (id == "m1") {
    t.mean_kind = GroundTruth::MeanKind::sine_1d;
    corner_constants(1);
    return t;
  }
  if (id == "m1_d2") {
    t.dim = 2;
    t.marginals = {CoordinateDensity{}, CoordinateDensity{}};
    t.mean_kind = GroundTruth::MeanKind::sine_1d;
    corner_constants(2);
    return t;
  }
  if (id == "m2") {
    t.mean_kind = GroundTruth::MeanKind::sine_1d;
    t.marginals[0].two_piece = true;
    t.marginals[0].split = 0.5;
    t.marginals[0].f1 = 0.25;
    t.marginals[0].f2 = 1.75;
    t.density_lower = 0.25;
    t.density_upper = 1.75;
    corner_constants(1);
    return t;
  }
  if (id == "m3") {
    t.mean_kind = GroundTruth::MeanKind::affine;
    t.mean_a = 2.0;
    t.mean_b = 3.0;
    t.heteroscedastic = true;
    t.scale_a = 0.5;  // sd(x) = (0.5 + x) * 0.5: 0.25 at x=0, 0.75 at x=1
    t.scale_b = 1.0;
    corner_constants(1);
    return t;
  }
  if (id == "m4_const") {
    t.mean_kind = GroundTruth::MeanKind::zero;
    corner_constants(1);
    return t;
  }
  if (id == "linear") {
    t.mean_kind = GroundTruth::MeanKind::linear_1d;
    t.noise.sigma = 0.25;
    corner_constants(1);
    return t;
  }
  if (id == "m5_unif") {
    t.mean_kind = GroundTruth::MeanKind::sine_1d;
    t.noise = {NoiseKind::uniform, 0.0, -0.5, 0.5};
    corner_constants(1);
    return t;
  }
  throw UnsupportedError("unknown model id: " + id);
}

std::vector<GroundTruth> model_catalog() {
  std::vector<GroundTruth> out;
  for (const char* id : {"m1", "m1_d2", "m2", "m3", "m4_const", "linear", "m5_unif"})
    out.push_back(make_model(id));
  return out;
}

double draw_response(const GroundTruth& truth, std::span<const double> z, const CounterRng& rng,
                     std::uint64_t counter) {
  const double scale = truth.heteroscedastic ? truth.scale_a + truth.scale_b * z[0] : truth.scale_a;
  double eps;
  if (truth.noise.kind == NoiseKind::gaussian)
    eps = truth.noise.sigma * rng.gaussian(counter);
  else
    eps = truth.noise.a + (truth.noise.b - truth.noise.a) * rng.uniform(counter);
  return truth.regression(z) + scale * eps;
}

SampleSet draw_sample(const GroundTruth& truth, int n, const RngSpec& spec) {
  if (n < 1) throw std::invalid_argument("sample size must be positive");
  const int d = truth.dim;
  CounterRng rng(spec);
  std::vector<double> xs(static_cast<std::size_t>(n) * d);
  std::vector<double> ys(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t base = static_cast<std::uint64_t>(i) * kLaneStride;
    double* x = xs.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j)
      x[j] = truth.marginals[static_cast<std::size_t>(j)].sample(
          rng.uniform(base + static_cast<std::uint64_t>(j)));
    ys[static_cast<std::size_t>(i)] =
        draw_response(truth, {x, static_cast<std::size_t>(d)}, rng,
                      base + static_cast<std::uint64_t>(d));
  }
  return SampleSet{PointCloud(std::move(xs), d), std::move(ys), 1};
}

void write_sample_csv(const SampleSet& sample, std::ostream& out) {
  char buf[32];
  for (int j = 1; j <= sample.dim(); ++j) out << "x_" << j << ",";
  if (sample.response_dim == 1) {
    out << "y\n";
  } else {
    for (int j = 1; j <= sample.response_dim; ++j)
      out << "y_" << j << (j == sample.response_dim ? '\n' : ',');
  }
  for (int i = 0; i < sample.size(); ++i) {
    const auto x = sample.covariates.point(i);
    for (double c : x) {
      std::snprintf(buf, sizeof buf, "%.17g", c);
      out << buf << ",";
    }
    const auto y = sample.response(i);
    for (std::size_t j = 0; j < y.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", y[j]);
      out << buf << (j + 1 == y.size() ? '\n' : ',');
    }
  }
}

SampleSet read_sample_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty CSV");
  int d = 0, m = 0;
  {
    std::stringstream header(line);
    std::string field;
    while (std::getline(header, field, ',')) {
      if (field.rfind("x_", 0) == 0)
        ++d;
      else if (field == "y" || field.rfind("y_", 0) == 0)
        ++m;
      else
        throw std::invalid_argument("unexpected CSV column: " + field);
    }
  }
  if (d < 1 || m < 1) throw std::invalid_argument("CSV must declare x_1..x_d and y columns");

  std::vector<double> xs, ys;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string field;
    int col = 0;
    while (std::getline(row, field, ',')) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str()) throw std::invalid_argument("bad CSV number: " + field);
      (col < d ? xs : ys).push_back(v);
      ++col;
    }
    if (col != d + m) throw std::invalid_argument("CSV row has wrong field count");
  }
  if (xs.empty()) throw std::invalid_argument("CSV has no data rows");
  return SampleSet{PointCloud(std::move(xs), d), std::move(ys), m};
}

}  // namespace knnproc
