#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "knnproc/bounds.hpp"
#include "knnproc/errors.hpp"
#include "knnproc/estimators.hpp"
#include "knnproc/harness.hpp"
#include "knnproc/mathstats.hpp"

using nlohmann::json;

namespace {

constexpr int kExitInvalidSpec = 2;
constexpr int kExitNumeric = 3;

std::vector<double> parse_point(const std::string& text) {
  std::vector<double> x;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) {
    std::size_t used = 0;
    x.push_back(std::stod(field, &used));
    if (used != field.size()) throw std::invalid_argument("bad coordinate: " + field);
  }
  if (x.empty()) throw std::invalid_argument("--x must list at least one coordinate");
  return x;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

int cmd_estimate(const std::string& data_path, const std::string& x_text, int k,
                 const std::string& functional, double level, bool has_level, double sigma2,
                 bool has_sigma2, const std::string& norm_name) {
  std::ifstream data(data_path);
  if (!data) throw std::invalid_argument("cannot open data file: " + data_path);
  const knnproc::SampleSet sample = knnproc::read_sample_csv(data);
  const std::vector<double> x = parse_point(x_text);
  const knnproc::Norm norm = knnproc::make_norm(norm_name, sample.dim());

  json out{{"data", data_path},
           {"n", sample.size()},
           {"dim", sample.dim()},
           {"x", x},
           {"k", k},
           {"norm", norm_name},
           {"functional", functional}};

  if (functional == "loclin") {
    if (!has_sigma2) throw std::invalid_argument("loclin needs --sigma2");
    const knnproc::LocalLinearFit fit = knnproc::local_linear_fit(sample, x, k, sigma2, norm);
    json beta = json::array();
    for (Eigen::Index j = 0; j < fit.beta.size(); ++j) beta.push_back(fit.beta[j]);
    out["estimate"] = fit.alpha;
    out["loclin"] = {{"alpha", fit.alpha},
                     {"beta", beta},
                     {"rank_deficient", fit.rank_deficient},
                     {"variance", matrix_to_json(fit.variance)},
                     {"sigma2", fit.variance_scale}};
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  const knnproc::KnnMeasure measure = knnproc::knn_measure(sample, x, k, norm);
  out["radius"] = measure.query.radius;
  out["in_ball_count"] = measure.query.in_ball.size();
  out["tie_count"] = measure.query.tie_count;

  if (functional == "mean") {
    out["estimate"] = knnproc::integrate(measure, knnproc::make_functional("identity"));
    if (has_level) {
      const auto ci =
          knnproc::functional_ci(measure, knnproc::make_functional("identity"), level);
      out["ci"] = {{"center", ci.center},
                   {"half_width", ci.half_width},
                   {"level", ci.level},
                   {"variance_clamped", ci.variance_clamped}};
    }
  } else if (functional.rfind("cdf:", 0) == 0) {
    const double t = std::stod(functional.substr(4));
    out["estimate"] = knnproc::conditional_cdf(measure, t);
    if (has_level) {
      const auto ci = knnproc::functional_ci(measure, knnproc::make_functional(functional), level);
      out["ci"] = {{"center", ci.center},
                   {"half_width", ci.half_width},
                   {"level", ci.level},
                   {"variance_clamped", ci.variance_clamped}};
    }
  } else if (functional.rfind("quantile:", 0) == 0) {
    out["estimate"] = knnproc::conditional_quantile(measure, std::stod(functional.substr(9)));
  } else {
    throw std::invalid_argument("unknown --functional (use mean, cdf:t, quantile:u or loclin)");
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_experiment(const std::string& spec_path, std::string out_dir, bool has_seed,
                   std::uint64_t seed, int workers) {
  knnproc::ExperimentSpec spec = knnproc::load_spec_file(spec_path);
  if (has_seed) spec.seed = seed;
  if (out_dir.empty()) out_dir = spec.out;
  if (out_dir.empty()) throw std::invalid_argument("no output directory: pass --out or set out");

  const knnproc::ExperimentResult result = knnproc::run_experiment(spec, workers);
  knnproc::write_result(result, out_dir);
  json summary{{"kind", knnproc::kind_name(spec.kind)},
               {"model", spec.model},
               {"rows", result.rows.size()},
               {"out", out_dir},
               {"aggregates", result.aggregates}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_calibrate(const std::string& spec_path, int workers) {
  const knnproc::ExperimentSpec spec = knnproc::load_spec_file(spec_path);
  const double k = knnproc::calibrate_k_constant(spec, workers);
  std::cout << json{{"K", k}, {"delta", spec.delta}}.dump(2) << "\n";
  return 0;
}

struct BoundFlags {
  knnproc::BoundInputs in;
  double mu = 100, p_ball = 0.1, envelope = 1, sigma = 0.5, k_prime = 1;
};

int cmd_bounds(const std::string& formula, const BoundFlags& f) {
  json out{{"formula", formula}};
  if (formula == "tau" || formula == "tau-bar" || formula == "window" ||
      formula == "uniform-error")
    f.in.validate();
  if (formula == "tau") {
    out["value"] = knnproc::deterministic_radius(f.in);
  } else if (formula == "tau-bar") {
    out["value"] = knnproc::uniform_radius_bound(f.in);
  } else if (formula == "window") {
    const knnproc::KWindow w = knnproc::admissible_k_window(f.in);
    out["k_min"] = w.k_min;
    out["k_max"] = w.k_max;
    out["k_min_radius_lemma"] = w.k_min_radius;
    out["empty"] = w.empty();
  } else if (formula == "uniform-error") {
    if (!knnproc::within_k_window(f.in))
      std::cerr << "warning: k is outside the admissible window\n";
    out["value"] = knnproc::uniform_error_bound(f.in);
  } else if (formula == "chernoff-lower") {
    out["value"] = knnproc::chernoff_lower(f.mu, f.in.delta);
  } else if (formula == "chernoff-upper") {
    out["value"] = knnproc::chernoff_upper(f.mu, f.in.delta);
  } else if (formula == "uniform-ball") {
    out["value"] = knnproc::uniform_ball_bound(f.p_ball, f.in.n, f.in.d, f.in.delta);
  } else if (formula == "vc") {
    out["value"] = knnproc::vc_concentration_bound(f.in.n, f.in.vc_v, f.in.vc_a, f.envelope,
                                                   f.sigma, f.in.delta, f.k_prime);
  } else {
    throw std::invalid_argument("unknown --formula: " + formula);
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"k-nearest-neighbor measures, estimators, bounds and experiments"};
  app.require_subcommand(1);

  // estimate
  auto* estimate = app.add_subcommand("estimate", "fit/query on a CSV dataset");
  std::string data_path, x_text, functional = "mean", norm_name = "euclidean";
  int k = 0, workers = 0;
  double level = 0.95, sigma2 = 0;
  estimate->add_option("--data", data_path, "CSV with header x_1..x_d,y")->required();
  estimate->add_option("--x", x_text, "query point, comma separated")->required();
  estimate->add_option("--k", k, "number of neighbors")->required();
  estimate->add_option("--functional", functional, "mean | cdf:t | quantile:u | loclin");
  auto* level_opt = estimate->add_option("--level", level, "confidence level in (0,1)");
  auto* sigma_opt = estimate->add_option("--sigma2", sigma2, "known residual variance (loclin)");
  estimate->add_option("--norm", norm_name, "euclidean | chebyshev");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "run a Monte Carlo experiment spec");
  std::string spec_path, out_dir;
  std::uint64_t seed = 0;
  experiment->add_option("--spec", spec_path, "JSON experiment spec")->required();
  experiment->add_option("--out", out_dir, "output directory (result.json, reps.csv)");
  auto* seed_opt = experiment->add_option("--seed", seed, "override the spec seed");
  experiment->add_option("--workers", workers, "worker threads (0 = hardware)");

  // bounds
  auto* bounds = app.add_subcommand("bounds", "evaluate a bound formula");
  std::string formula;
  BoundFlags f;
  bounds->add_option("--formula", formula,
                     "tau | tau-bar | window | uniform-error | chernoff-lower | chernoff-upper | "
                     "uniform-ball | vc")
      ->required();
  bounds->add_option("--d", f.in.d);
  bounds->add_option("--n", f.in.n);
  bounds->add_option("--k", f.in.k);
  bounds->add_option("--delta", f.in.delta);
  bounds->add_option("--v", f.in.vc_v);
  bounds->add_option("--A", f.in.vc_a);
  bounds->add_option("--sigma-g2", f.in.sigma_g2);
  bounds->add_option("--L", f.in.lipschitz);
  bounds->add_option("--b", f.in.density_lower);
  bounds->add_option("--U", f.in.density_upper);
  bounds->add_option("--c", f.in.support_c);
  bounds->add_option("--T", f.in.support_horizon);
  bounds->add_option("--Vd", f.in.ball_volume);
  bounds->add_option("--K", f.in.big_k);
  bounds->add_option("--fx", f.in.density_at_x);
  bounds->add_option("--mu", f.mu);
  bounds->add_option("--pb", f.p_ball);
  bounds->add_option("--envelope", f.envelope);
  bounds->add_option("--sigma", f.sigma);
  bounds->add_option("--Kprime", f.k_prime);

  // calibrate-k-constant
  auto* calibrate = app.add_subcommand("calibrate-k-constant",
                                       "smallest K making the uniform bound hold");
  std::string cal_spec;
  int cal_workers = 0;
  calibrate->add_option("--spec", cal_spec, "bound_validity experiment spec")->required();
  calibrate->add_option("--workers", cal_workers, "worker threads (0 = hardware)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalidSpec;
  }

  try {
    if (estimate->parsed())
      return cmd_estimate(data_path, x_text, k, functional, level, level_opt->count() > 0,
                          sigma2, sigma_opt->count() > 0, norm_name);
    if (experiment->parsed())
      return cmd_experiment(spec_path, out_dir, seed_opt->count() > 0, seed, workers);
    if (bounds->parsed()) return cmd_bounds(formula, f);
    if (calibrate->parsed()) return cmd_calibrate(cal_spec, cal_workers);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidSpec;
  } catch (const knnproc::UnsupportedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidSpec;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
