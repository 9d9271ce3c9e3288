// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// fail. Statistical criteria run fixed-seed Monte Carlo at pinned
// tolerances; each also carries a wall-clock budget.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "knnproc/bounds.hpp"
#include "knnproc/estimators.hpp"
#include "knnproc/harness.hpp"
#include "knnproc/mathstats.hpp"

using namespace knnproc;

namespace {

int workers() { return std::min(4, omp_get_max_threads()); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

bool in_range(double v, double lo, double hi) { return v >= lo && v <= hi; }

// ---- 1. oracle equivalence --------------------------------------------

Outcome oracle_equivalence() {
  std::mt19937_64 gen(424242);
  std::uniform_int_distribution<int> n_dist(1, 500), d_dist(1, 4);
  std::uniform_real_distribution<double> unif(-1, 1);
  int mismatches = 0;
  const int queries = 10000;
  for (int q = 0; q < queries; ++q) {
    const int n = n_dist(gen), d = d_dist(gen);
    std::vector<double> pts(static_cast<std::size_t>(n) * d);
    for (auto& p : pts) p = unif(gen);
    // duplicated points in a third of the clouds force boundary ties
    if (n > 1 && q % 3 == 0) {
      std::uniform_int_distribution<int> idx(0, n - 1);
      for (int copies = 0; copies < n / 4; ++copies) {
        const int from = idx(gen), to = idx(gen);
        for (int j = 0; j < d; ++j) pts[static_cast<std::size_t>(to) * d + j] =
            pts[static_cast<std::size_t>(from) * d + j];
      }
    }
    const PointCloud cloud(std::move(pts), d);
    const Norm norm = make_norm(q % 2 == 0 ? "euclidean" : "chebyshev", d);
    std::vector<double> x(static_cast<std::size_t>(d));
    if (q % 5 == 0) {
      const auto p = cloud.point(std::uniform_int_distribution<int>(0, n - 1)(gen));
      x.assign(p.begin(), p.end());
    } else {
      for (auto& c : x) c = unif(gen);
    }
    const int k = std::uniform_int_distribution<int>(1, n)(gen);
    const NeighborQuery fast = knn_radius(cloud, x, k, norm);
    const NeighborQuery slow = knn_radius_brute(cloud, x, k, norm);
    if (fast.radius != slow.radius || fast.in_ball != slow.in_ball ||
        fast.tie_count != slow.tie_count)
      ++mismatches;
  }
  return {mismatches == 0, fmt("%d/%d queries matched the sort oracle exactly",
                               queries - mismatches, queries)};
}

// ---- 2. radius concentration ------------------------------------------

Outcome radius_concentration() {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::radius_concentration;
  spec.model = "m1";
  spec.n_grid = {100000};
  spec.k_rule = {KRule::Type::power, 0.7};
  spec.replications = 500;
  spec.delta = 0.05;
  spec.x_list = {{0.5}};
  spec.x_grid = 101;
  spec.seed = 20250801;
  const ExperimentResult r = run_radius_concentration(spec, workers());
  const double med = r.aggregates.at("median_ratio_d").get<double>();
  const double viol = r.aggregates.at("violation_freq").get<double>();
  const bool pass = in_range(med, 0.95, 1.05) && viol <= 0.05;
  return {pass, fmt("median (tau_hat/tau)^d = %.4f in [0.95,1.05]; sup-radius violations %.3f <= 0.05",
                    med, viol)};
}

// ---- 3 & 4. clt and ci coverage ---------------------------------------

ExperimentResult clt_result() {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::clt;
  spec.model = "m1";
  spec.n_grid = {100000};
  spec.k_rule = {KRule::Type::power, 0.6};  // k^{3/2}/n -> 0 undersmoothing
  spec.replications = 2000;
  spec.level = 0.95;
  spec.x_list = {{0.5}};
  spec.functionals = {"identity"};
  spec.seed = 20250802;
  return run_clt(spec, workers());
}

Outcome clt_limit(const ExperimentResult& r) {
  const auto& agg = r.aggregates.at("per_functional").at("identity");
  const double ks = agg.at("ks_distance").get<double>();
  const double var = agg.at("z_variance").get<double>();
  const bool pass = ks < 0.05 && in_range(var, 0.9, 1.1);
  return {pass, fmt("KS distance %.4f < 0.05; Var(Z) = %.4f in [0.9,1.1]", ks, var)};
}

Outcome ci_coverage(const ExperimentResult& r) {
  const double cov =
      r.aggregates.at("per_functional").at("identity").at("coverage").get<double>();
  return {in_range(cov, 0.93, 0.97), fmt("empirical coverage %.4f in [0.93,0.97]", cov)};
}

// ---- 5. convergence rate ----------------------------------------------

Outcome rate_sweep() {
  ExperimentSpec d1;
  d1.kind = ExperimentKind::rate_sweep;
  d1.model = "m1";
  d1.n_grid = {1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072};
  d1.k_rule = {KRule::Type::power, 2.0 / 3.0};
  d1.replications = 50;
  d1.functionals = {"identity"};
  d1.x_grid = 101;
  d1.seed = 20250803;
  const double s1 =
      run_rate_sweep(d1, workers()).aggregates.at("slope_vs_n").at("slope").get<double>();

  ExperimentSpec d2 = d1;
  d2.model = "m1_d2";
  d2.k_rule = {KRule::Type::power, 0.5};
  d2.x_grid = 21;
  d2.seed = 20250804;
  const double s2 =
      run_rate_sweep(d2, workers()).aggregates.at("slope_vs_n").at("slope").get<double>();

  const bool pass = std::abs(s1 + 1.0 / 3.0) <= 0.08 && std::abs(s2 + 0.25) <= 0.08;
  return {pass, fmt("d=1 slope %.4f (-1/3 +- 0.08); d=2 slope %.4f (-1/4 +- 0.08)", s1, s2)};
}

// ---- 6. nadaraya-watson contrast --------------------------------------

Outcome nw_contrast() {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::nw_contrast;
  spec.model = "m2";
  spec.n_grid = {20000};
  spec.k_rule = {KRule::Type::power, 0.7};
  spec.replications = 800;
  spec.x_list = {{0.25}, {0.75}};  // f = 0.25 and 1.75
  spec.functionals = {"identity"};
  spec.seed = 20250805;
  const ExperimentResult r = run_nw_contrast(spec, workers());
  const double knn_ratio = r.aggregates.at("knn_variance_ratio").get<double>();
  const double nw_ratio = r.aggregates.at("nw_variance_ratio").get<double>();
  const double expected = r.aggregates.at("expected_nw_ratio").get<double>();
  const bool pass = in_range(knn_ratio, 0.8, 1.25) &&
                    std::abs(nw_ratio - expected) <= 0.3 * expected;
  return {pass, fmt("k-NN variance ratio %.3f in [0.8,1.25]; NW ratio %.2f within 30%% of %.0f",
                    knn_ratio, nw_ratio, expected)};
}

// ---- 7. uniform bound validity ----------------------------------------

Outcome bound_validity() {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::bound_validity;
  spec.model = "m1";
  spec.n_grid = {10000};
  spec.k_rule = {KRule::Type::fixed, 500};
  spec.replications = 200;
  spec.delta = 0.05;
  for (int i = 0; i <= 20; ++i)
    spec.functionals.push_back("cdf:" + std::to_string(-1.5 + 0.15 * i));
  spec.x_grid = 101;
  spec.vc_v = 2.0;  // indicator cells
  spec.vc_a = 2.0;
  spec.seed = 20250806;  // seed set A: calibration
  const double k_star = calibrate_k_constant(spec, workers());

  spec.bound_k = k_star;
  spec.seed = 918273645;  // disjoint seed set B: validation
  const ExperimentResult held_out = run_bound_validity(spec, workers());
  const double viol = held_out.aggregates.at("violation_freq").get<double>();

  ExperimentSpec flat;  // bias-free model: pure 1/sqrt(k) scaling
  flat.kind = ExperimentKind::bound_validity;
  flat.model = "m4_const";
  flat.n_grid = {1024, 2048, 4096, 8192, 16384, 32768};
  flat.k_rule = {KRule::Type::power, 0.8};
  flat.replications = 50;
  for (int i = 0; i <= 20; ++i)
    flat.functionals.push_back("cdf:" + std::to_string(-1.5 + 0.15 * i));
  flat.x_grid = 21;
  flat.seed = 20250807;
  const ExperimentResult sweep = run_bound_validity(flat, workers());
  const double slope = sweep.aggregates.at("slope_vs_k").at("slope").get<double>();

  const bool pass = viol <= spec.delta && std::abs(slope + 0.5) <= 0.1;
  return {pass, fmt("calibrated K = %.1f; held-out violations %.3f <= 0.05; k-sweep slope %.3f (-0.5 +- 0.1)",
                    k_star, viol, slope)};
}

// ---- 8. formula evaluators --------------------------------------------

Outcome formula_evaluators() {
  int failures = 0;
  auto check = [&](double value, double expected) {
    if (std::abs(value - expected) > 1e-10 * std::max(1.0, std::abs(expected))) ++failures;
  };

  BoundInputs in;
  in.d = 2;
  in.n = 10000;
  in.k = 314;
  in.density_at_x = 1.0;
  in.ball_volume = M_PI;
  check(deterministic_radius(in), 0.09997464891746821);

  in = BoundInputs{};
  in.d = 3;
  in.n = 50000;
  in.k = 250;
  in.density_lower = 0.6;
  in.support_c = 0.5;
  in.ball_volume = 4.0 * M_PI / 3.0;
  check(uniform_radius_bound(in), 0.19964727123275405);

  in = BoundInputs{};
  in.d = 1;
  in.n = 1000000;
  in.k = 1000;
  in.delta = 0.05;
  const KWindow w = admissible_k_window(in);
  check(w.k_min, 479.74311988478905);
  check(w.k_min_radius, 463.1075875513504);

  check(chernoff_lower(200.0, 0.05), 165.3836323479543);
  check(chernoff_upper(200.0, 0.05), 242.39621874804868);
  check(uniform_ball_bound(0.01, 100000, 2, 0.05), 0.003613721386288465);
  check(vc_concentration_bound(100, 1, 1, 1, 1, 0.1, 2), 40.60783219915369);
  check(normal_quantile(0.975) * 0.5, 0.979981992270027);

  return {failures == 0,
          fmt("%d/8 frozen calculator values matched to 1e-10 relative", 8 - failures)};
}

// ---- 9. invariant suites ----------------------------------------------

Outcome invariants() {
  std::vector<std::string> problems;
  std::mt19937_64 gen(515151);
  std::uniform_real_distribution<double> unif(-1, 1);

  // measure normalization + Galois connection
  {
    std::vector<double> xs(300), ys(300);
    for (auto& v : xs) v = unif(gen);
    for (auto& v : ys) v = 3 * unif(gen);
    const SampleSet s{PointCloud(std::move(xs), 1), std::move(ys), 1};
    const KnnMeasure m = knn_measure(s, std::vector<double>{0.1}, 50);
    if (integrate(m, make_functional("const")) !=
        static_cast<double>(m.query.in_ball.size()) / 50)
      problems.push_back("normalization");
    for (int i = 1; i < 20; ++i) {
      const double u = i / 20.0;
      if (conditional_cdf(m, conditional_quantile(m, u)) < u) {
        problems.push_back("galois");
        break;
      }
    }
  }

  // local-linear affine equivariance and Gram pseudo-inverse identity
  {
    std::vector<double> xs(200), ys(200);
    for (auto& v : xs) v = unif(gen);
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = std::sin(2 * xs[i]) + 0.3 * unif(gen);
    std::vector<double> xs2 = xs, ys2(200);
    for (std::size_t i = 0; i < ys.size(); ++i) ys2[i] = -3.0 * ys[i] + 1.5;
    const SampleSet s1{PointCloud(std::move(xs), 1), std::move(ys), 1};
    const SampleSet s2{PointCloud(std::move(xs2), 1), std::move(ys2), 1};
    const std::vector<double> x{0.2};
    const LocalLinearFit f1 = local_linear_fit(s1, x, 40, 1.0);
    const LocalLinearFit f2 = local_linear_fit(s2, x, 40, 1.0);
    if (std::abs(f2.alpha - (-3.0 * f1.alpha + 1.5)) > 1e-10 * std::abs(f2.alpha) ||
        std::abs(f2.beta[0] - (-3.0 * f1.beta[0])) > 1e-10 * std::abs(f2.beta[0]))
      problems.push_back("affine equivariance");
    const Eigen::MatrixXd g = f1.gram, p = f1.gram_pinv;
    if ((g * p * g - g).norm() > 1e-8 * g.norm()) problems.push_back("gram pinv");
  }

  // experiment determinism: byte-identical outputs for 1 vs 4 workers
  {
    ExperimentSpec spec;
    spec.kind = ExperimentKind::clt;
    spec.model = "m1";
    spec.n_grid = {2000};
    spec.k_rule = {KRule::Type::power, 0.6};
    spec.replications = 24;
    spec.x_list = {{0.5}};
    spec.functionals = {"identity"};
    spec.seed = 20250808;
    const std::string dir = "acceptance_out";
    std::filesystem::remove_all(dir);
    write_result(run_experiment(spec, 1), dir + "/w1");
    write_result(run_experiment(spec, 4), dir + "/w4");
    auto slurp = [](const std::string& path) {
      std::ifstream in(path, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    if (slurp(dir + "/w1/result.json") != slurp(dir + "/w4/result.json") ||
        slurp(dir + "/w1/reps.csv") != slurp(dir + "/w4/reps.csv") ||
        slurp(dir + "/w1/reps.csv").empty())
      problems.push_back("determinism");
  }

  if (problems.empty())
    return {true, "normalization, galois, affine, gram-pinv, 1-vs-4-worker determinism all hold"};
  std::string detail = "failed:";
  for (const auto& p : problems) detail += " " + p;
  return {false, detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double limit_s;
  };

  // criteria 3 and 4 share one Monte Carlo run
  ExperimentResult shared_clt;
  const std::vector<Criterion> criteria{
      {"oracle equivalence", oracle_equivalence, 10},
      {"radius concentration", radius_concentration, 180},
      {"clt",
       [&] {
         shared_clt = clt_result();
         return clt_limit(shared_clt);
       },
       300},
      {"ci coverage", [&] { return ci_coverage(shared_clt); }, 300},
      {"rate sweep", rate_sweep, 600},
      {"nw contrast", nw_contrast, 180},
      {"bound validity", bound_validity, 300},
      {"formula evaluators", formula_evaluators, 1},
      {"invariant suites", invariants, 60},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criteria[i].run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = elapsed <= criteria[i].limit_s;
    const bool pass = outcome.pass && in_time;
    if (!pass) ++failures;
    std::printf("[%s] %zu. %s: %s (%.1f s, limit %.0f s)\n", pass ? "PASS" : "FAIL", i + 1,
                criteria[i].name, outcome.detail.c_str(), elapsed, criteria[i].limit_s);
    std::fflush(stdout);
  }
  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
