#include "knnproc/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "knnproc/errors.hpp"
#include "knnproc/estimators.hpp"
#include "knnproc/mathstats.hpp"

namespace knnproc {

namespace {

using nlohmann::json;

// Everything a replication needs that does not depend on the draw. Built
// once per n-grid entry, shared read-only across workers.
struct NContext {
  long n = 0;
  long k = 0;
  bool skipped = false;  // bound_validity with an empty admissible window
  double tau_bar = 0;
  bool radius_window_ok = false;
  std::vector<std::vector<double>> xgrid;
  std::vector<std::vector<double>> mu_grid;  // [g][grid point]
  std::vector<std::vector<double>> mu_x;     // [x_list entry][g]
  std::vector<std::vector<double>> cov_x;    // [x_list entry][g]
  KWindow window;
  double bound = 0;
  std::vector<double> bias_bound;  // per g
  double nw_tau = 0;
};

struct RunContext {
  GroundTruth truth;
  Norm norm;
  double ball_vol = 0;
  std::vector<Functional> gs;
  std::vector<NContext> per_n;
  double sigma_g2 = 0;  // class constants, bound_validity only
  double lipschitz = 0;
};

const char* kKindNames[] = {"radius_concentration", "clt",            "ci_coverage",
                            "rate_sweep",           "nw_contrast",    "bound_validity",
                            "bias_bound"};

bool uses_x_grid(ExperimentKind kind) {
  return kind == ExperimentKind::radius_concentration || kind == ExperimentKind::rate_sweep ||
         kind == ExperimentKind::bound_validity;
}

bool uses_class_constants(const ExperimentSpec& spec) {
  return spec.kind == ExperimentKind::bound_validity ||
         spec.k_rule.type == KRule::Type::theorem_window;
}

BoundInputs base_bound_inputs(const ExperimentSpec& spec, const RunContext& ctx, long n,
                              long k) {
  BoundInputs in;
  in.d = ctx.truth.dim;
  in.n = n;
  in.k = std::max<long>(k, 1);
  in.delta = spec.delta;
  in.vc_v = spec.vc_v;
  in.vc_a = spec.vc_a;
  in.sigma_g2 = ctx.sigma_g2;
  in.lipschitz = ctx.lipschitz;
  in.density_lower = ctx.truth.density_lower;
  in.density_upper = ctx.truth.density_upper;
  in.support_c = ctx.truth.support_c;
  in.support_horizon = ctx.truth.support_horizon;
  in.ball_volume = ctx.ball_vol;
  in.big_k = spec.bound_k;
  return in;
}

double density_at(const GroundTruth& truth, std::span<const double> x) {
  const double f = truth.density(x);
  if (!(f > 0)) throw std::invalid_argument("query point lies outside the model support");
  return f;
}

RunContext build_run_context(const ExperimentSpec& spec) {
  RunContext ctx;
  ctx.truth = make_model(spec.model);
  ctx.norm = {NormKind::euclidean, ctx.truth.dim};
  ctx.ball_vol = unit_ball_volume(ctx.norm).value;
  for (const auto& id : spec.functionals) ctx.gs.push_back(make_functional(id));

  for (const auto& x : spec.x_list)
    if (static_cast<int>(x.size()) != ctx.truth.dim)
      throw std::invalid_argument("x_list entry dimension does not match the model");

  if (uses_class_constants(spec)) {
    for (const auto& g : ctx.gs) {
      const std::string key = functional_class_key(g.id);
      ctx.sigma_g2 = std::max(ctx.sigma_g2, ctx.truth.sup_cond_variance(key));
      ctx.lipschitz = std::max(ctx.lipschitz, ctx.truth.lipschitz(key));
    }
  }

  for (long n : spec.n_grid) {
    NContext nc;
    nc.n = n;

    if (spec.k_rule.type == KRule::Type::theorem_window) {
      BoundInputs in = base_bound_inputs(spec, ctx, n, 1);
      nc.window = admissible_k_window(in);
      const double k_hi = std::min(nc.window.k_max, static_cast<double>(n));
      if (nc.window.empty() || std::ceil(nc.window.k_min) > k_hi) {
        if (spec.kind != ExperimentKind::bound_validity)
          throw std::invalid_argument("empty admissible k window at n = " + std::to_string(n));
        nc.skipped = true;
        ctx.per_n.push_back(std::move(nc));
        continue;
      }
      // Geometric midpoint balances the variance and bias ends of the window.
      const double mid = std::sqrt(nc.window.k_min * k_hi);
      nc.k = std::clamp<long>(static_cast<long>(std::llround(mid)),
                              static_cast<long>(std::ceil(nc.window.k_min)),
                              static_cast<long>(std::floor(k_hi)));
    } else {
      nc.k = k_for(spec, ctx.truth, n);
    }

    BoundInputs in = base_bound_inputs(spec, ctx, n, nc.k);
    nc.tau_bar = uniform_radius_bound(in);
    nc.window = admissible_k_window(in);
    nc.radius_window_ok =
        static_cast<double>(nc.k) >= nc.window.k_min_radius &&
        static_cast<double>(nc.k) <=
            static_cast<double>(n) * std::pow(in.support_horizon, in.d) * in.density_lower *
                in.support_c * in.ball_volume / 2.0;

    if (spec.kind == ExperimentKind::bound_validity) {
      if (nc.window.empty()) {
        nc.skipped = true;
        ctx.per_n.push_back(std::move(nc));
        continue;
      }
      nc.bound = uniform_error_bound(in);
    }

    if (uses_x_grid(spec.kind)) {
      const double margin = spec.interior_only ? nc.tau_bar : 0.0;
      nc.xgrid = build_x_grid(ctx.truth, spec.x_grid, margin);
      if (spec.kind != ExperimentKind::radius_concentration) {
        nc.mu_grid.resize(ctx.gs.size());
        for (std::size_t gi = 0; gi < ctx.gs.size(); ++gi) {
          nc.mu_grid[gi].reserve(nc.xgrid.size());
          for (const auto& z : nc.xgrid)
            nc.mu_grid[gi].push_back(ctx.truth.cond_mean(ctx.gs[gi], z));
        }
      }
    }

    nc.mu_x.resize(spec.x_list.size());
    nc.cov_x.resize(spec.x_list.size());
    for (std::size_t xi = 0; xi < spec.x_list.size(); ++xi) {
      for (const auto& g : ctx.gs) {
        nc.mu_x[xi].push_back(ctx.truth.cond_mean(g, spec.x_list[xi]));
        nc.cov_x[xi].push_back(ctx.truth.cond_cov(g, g, spec.x_list[xi]));
      }
    }

    if (spec.kind == ExperimentKind::clt) {
      for (std::size_t gi = 0; gi < ctx.gs.size(); ++gi)
        if (!(nc.cov_x[0][gi] > 0))
          throw std::invalid_argument("degenerate functional '" + ctx.gs[gi].id +
                                      "': zero conditional variance at x");
    }

    if (spec.kind == ExperimentKind::nw_contrast) {
      in.density_at_x = density_at(ctx.truth, spec.x_list[1]);  // matched at x_high
      nc.nw_tau = deterministic_radius(in);
    }

    if (spec.kind == ExperimentKind::bias_bound) {
      const auto& x = spec.x_list[0];
      const double fx = density_at(ctx.truth, x);
      const double radius = std::pow(
          (1.0 + spec.eta) * static_cast<double>(nc.k) /
              (static_cast<double>(n) * ctx.ball_vol * fx),
          1.0 / ctx.truth.dim);
      for (const auto& g : ctx.gs)
        nc.bias_bound.push_back(
            modulus_of_continuity(ctx.truth, g, x, radius, spec.modulus_grid));
    }

    ctx.per_n.push_back(std::move(nc));
  }
  return ctx;
}

std::vector<std::string> columns_for(const ExperimentSpec& spec) {
  std::vector<std::string> cols{"n", "rep"};
  switch (spec.kind) {
    case ExperimentKind::radius_concentration:
      for (std::size_t i = 0; i < spec.x_list.size(); ++i)
        cols.push_back("ratio_d_x" + std::to_string(i));
      cols.insert(cols.end(), {"sup_tau_hat", "tau_bar", "violation"});
      break;
    case ExperimentKind::clt:
      for (const auto& g : spec.functionals) cols.push_back("z_" + g);
      for (const auto& g : spec.functionals) cols.push_back("covered_" + g);
      break;
    case ExperimentKind::ci_coverage:
      for (const auto& g : spec.functionals) cols.push_back("covered_" + g);
      for (const auto& g : spec.functionals) cols.push_back("halfwidth_" + g);
      break;
    case ExperimentKind::rate_sweep:
      cols.push_back("sup_err");
      break;
    case ExperimentKind::nw_contrast:
      cols.insert(cols.end(),
                  {"knn_low", "knn_high", "nw_low", "nw_high", "nw_empty_low", "nw_empty_high"});
      break;
    case ExperimentKind::bound_validity:
      cols.insert(cols.end(), {"sup_err", "bound", "violated"});
      break;
    case ExperimentKind::bias_bound:
      for (const auto& g : spec.functionals) {
        cols.push_back("vhat_" + g);
        cols.push_back("bound_" + g);
        cols.push_back("violated_" + g);
      }
      break;
  }
  return cols;
}

double sup_error_over_grid(const RunContext& ctx, const NContext& nc, const SampleSet& sample) {
  double sup = 0;
  for (std::size_t xi = 0; xi < nc.xgrid.size(); ++xi) {
    const KnnMeasure m =
        knn_measure(sample, nc.xgrid[xi], static_cast<int>(nc.k), ctx.norm);
    for (std::size_t gi = 0; gi < ctx.gs.size(); ++gi)
      sup = std::max(sup, std::abs(integrate(m, ctx.gs[gi]) - nc.mu_grid[gi][xi]));
  }
  return sup;
}

std::vector<double> replicate(const ExperimentSpec& spec, const RunContext& ctx,
                              const NContext& nc, long rep, std::uint64_t global_rep) {
  const SampleSet sample =
      draw_sample(ctx.truth, static_cast<int>(nc.n), RngSpec{spec.seed, global_rep});
  const int k = static_cast<int>(nc.k);
  std::vector<double> row{static_cast<double>(nc.n), static_cast<double>(rep)};

  switch (spec.kind) {
    case ExperimentKind::radius_concentration: {
      for (const auto& x : spec.x_list) {
        BoundInputs in;
        in.d = ctx.truth.dim;
        in.n = nc.n;
        in.k = nc.k;
        in.ball_volume = ctx.ball_vol;
        in.density_at_x = density_at(ctx.truth, x);
        const double tau_hat = sample.covariates.knn_radius_value(x, k, ctx.norm);
        row.push_back(std::pow(tau_hat / deterministic_radius(in), ctx.truth.dim));
      }
      double sup = 0;
      for (const auto& x : nc.xgrid)
        sup = std::max(sup, sample.covariates.knn_radius_value(x, k, ctx.norm));
      row.push_back(sup);
      row.push_back(nc.tau_bar);
      row.push_back(sup > nc.tau_bar ? 1.0 : 0.0);
      break;
    }
    case ExperimentKind::clt: {
      const KnnMeasure m = knn_measure(sample, spec.x_list[0], k, ctx.norm);
      std::vector<double> covered;
      for (std::size_t gi = 0; gi < ctx.gs.size(); ++gi) {
        const double mu_hat = integrate(m, ctx.gs[gi]);
        row.push_back(std::sqrt(static_cast<double>(k)) * (mu_hat - nc.mu_x[0][gi]) /
                      std::sqrt(nc.cov_x[0][gi]));
        const ConfidenceInterval ci = functional_ci(m, ctx.gs[gi], spec.level);
        covered.push_back(std::abs(ci.center - nc.mu_x[0][gi]) <= ci.half_width ? 1.0 : 0.0);
      }
      row.insert(row.end(), covered.begin(), covered.end());
      break;
    }
    case ExperimentKind::ci_coverage: {
      const KnnMeasure m = knn_measure(sample, spec.x_list[0], k, ctx.norm);
      std::vector<double> widths;
      for (std::size_t gi = 0; gi < ctx.gs.size(); ++gi) {
        const ConfidenceInterval ci = functional_ci(m, ctx.gs[gi], spec.level);
        row.push_back(std::abs(ci.center - nc.mu_x[0][gi]) <= ci.half_width ? 1.0 : 0.0);
        widths.push_back(ci.half_width);
      }
      row.insert(row.end(), widths.begin(), widths.end());
      break;
    }
    case ExperimentKind::rate_sweep: {
      row.push_back(sup_error_over_grid(ctx, nc, sample));
      break;
    }
    case ExperimentKind::nw_contrast: {
      const Functional& g = ctx.gs[0];
      double knn_z[2], nw_z[2], nw_empty[2];
      for (int side = 0; side < 2; ++side) {
        const auto& x = spec.x_list[static_cast<std::size_t>(side)];
        const KnnMeasure m = knn_measure(sample, x, k, ctx.norm);
        knn_z[side] = std::sqrt(static_cast<double>(k)) *
                      (integrate(m, g) - nc.mu_x[static_cast<std::size_t>(side)][0]);
        try {
          const NwMeasure nw = nw_measure(sample, x, nc.nw_tau, ctx.norm);
          const double scale = std::sqrt(static_cast<double>(nc.n) *
                                         std::pow(nc.nw_tau, ctx.truth.dim));
          nw_z[side] = scale * (integrate(nw, g) - nc.mu_x[static_cast<std::size_t>(side)][0]);
          nw_empty[side] = 0.0;
        } catch (const EmptyBallError&) {
          nw_z[side] = std::numeric_limits<double>::quiet_NaN();
          nw_empty[side] = 1.0;
        }
      }
      row.insert(row.end(), {knn_z[0], knn_z[1], nw_z[0], nw_z[1], nw_empty[0], nw_empty[1]});
      break;
    }
    case ExperimentKind::bound_validity: {
      const double sup = sup_error_over_grid(ctx, nc, sample);
      row.push_back(sup);
      row.push_back(nc.bound);
      row.push_back(sup > nc.bound ? 1.0 : 0.0);
      break;
    }
    case ExperimentKind::bias_bound: {
      const auto& x = spec.x_list[0];
      const KnnMeasure m = knn_measure(sample, x, k, ctx.norm);
      for (std::size_t gi = 0; gi < ctx.gs.size(); ++gi) {
        double vhat = 0;
        for (int i : m.query.in_ball)
          vhat += ctx.truth.cond_mean(ctx.gs[gi], sample.covariates.point(i)) - nc.mu_x[0][gi];
        vhat /= k;
        row.push_back(vhat);
        row.push_back(nc.bias_bound[gi]);
        row.push_back(std::abs(vhat) > nc.bias_bound[gi] ? 1.0 : 0.0);
      }
      break;
    }
  }
  return row;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double ma = mean(a), mb = mean(b);
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

json constants_for(const ExperimentSpec& spec, const RunContext& ctx) {
  json model{{"id", ctx.truth.id},
             {"dim", ctx.truth.dim},
             {"density_lower", ctx.truth.density_lower},
             {"density_upper", ctx.truth.density_upper},
             {"support_c", ctx.truth.support_c},
             {"support_horizon", ctx.truth.support_horizon},
             {"noise_kind", ctx.truth.noise.kind == NoiseKind::gaussian ? "gaussian" : "uniform"},
             {"noise_sigma", ctx.truth.noise.sigma}};
  json constants{{"model", model},
                 {"norm", norm_name(ctx.norm)},
                 {"ball_volume", ctx.ball_vol}};
  json k_by_n = json::array();
  for (const auto& nc : ctx.per_n)
    k_by_n.push_back({{"n", nc.n}, {"k", nc.k}, {"skipped", nc.skipped}});
  constants["k_by_n"] = k_by_n;

  if (uses_class_constants(spec)) {
    constants["sigma_g2"] = ctx.sigma_g2;
    constants["lipschitz"] = ctx.lipschitz;
  }
  const auto usable = std::find_if(ctx.per_n.begin(), ctx.per_n.end(),
                                   [](const NContext& nc) { return !nc.skipped; });
  if (!spec.x_list.empty() && !ctx.gs.empty() && usable != ctx.per_n.end()) {
    // analytic targets at the query points, for self-describing results
    json per_x = json::array();
    for (std::size_t xi = 0; xi < spec.x_list.size(); ++xi) {
      json targets = json::object();
      for (std::size_t gi = 0; gi < ctx.gs.size(); ++gi)
        targets[ctx.gs[gi].id] = {{"mean", usable->mu_x[xi][gi]},
                                  {"variance", usable->cov_x[xi][gi]}};
      per_x.push_back({{"x", spec.x_list[xi]}, {"targets", targets}});
    }
    constants["analytic_at_x"] = per_x;
  }
  if (spec.kind == ExperimentKind::radius_concentration) {
    json by_n = json::array();
    for (const auto& nc : ctx.per_n)
      by_n.push_back({{"n", nc.n},
                      {"tau_bar", nc.tau_bar},
                      {"radius_window_ok", nc.radius_window_ok}});
    constants["radius_by_n"] = by_n;
  }
  if (spec.kind == ExperimentKind::bound_validity) {
    json by_n = json::array();
    for (const auto& nc : ctx.per_n)
      by_n.push_back({{"n", nc.n},
                      {"k_min", nc.window.k_min},
                      {"k_max", nc.window.k_max},
                      {"k_min_radius", nc.window.k_min_radius},
                      {"empty", nc.window.empty()},
                      {"bound", nc.bound}});
    constants["window_by_n"] = by_n;
    constants["bound_k"] = spec.bound_k;
    constants["vc"] = {{"v", spec.vc_v}, {"A", spec.vc_a}};
  }
  if (spec.kind == ExperimentKind::nw_contrast) {
    json by_n = json::array();
    for (const auto& nc : ctx.per_n) by_n.push_back({{"n", nc.n}, {"nw_tau", nc.nw_tau}});
    constants["nw_tau_by_n"] = by_n;
    constants["density_low"] = ctx.truth.density(spec.x_list[0]);
    constants["density_high"] = ctx.truth.density(spec.x_list[1]);
  }
  if (spec.kind == ExperimentKind::bias_bound) {
    json by_n = json::array();
    for (const auto& nc : ctx.per_n) {
      json bounds = json::object();
      for (std::size_t gi = 0; gi < ctx.gs.size(); ++gi)
        bounds[ctx.gs[gi].id] = nc.bias_bound[gi];
      by_n.push_back({{"n", nc.n}, {"bound", bounds}});
    }
    constants["bias_bound_by_n"] = by_n;
    constants["eta"] = spec.eta;
  }
  return constants;
}

}  // namespace

std::string kind_name(ExperimentKind kind) { return kKindNames[static_cast<int>(kind)]; }

ExperimentKind kind_from_name(const std::string& name) {
  for (int i = 0; i < 7; ++i)
    if (name == kKindNames[i]) return static_cast<ExperimentKind>(i);
  throw std::invalid_argument("unknown experiment kind: " + name);
}

void ExperimentSpec::validate() const {
  if (schema_version != 1) throw std::invalid_argument("unsupported schema_version");
  if (n_grid.empty()) throw std::invalid_argument("n_grid must not be empty");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] < 1) throw std::invalid_argument("n_grid entries must be positive");
    if (i > 0 && n_grid[i] <= n_grid[i - 1])
      throw std::invalid_argument("n_grid must be strictly increasing");
  }
  if (replications < 1) throw std::invalid_argument("replications must be at least 1");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must be in (0,1)");
  if (x_grid < 2) throw std::invalid_argument("x_grid must be at least 2");
  if (modulus_grid < 2) throw std::invalid_argument("modulus_grid must be at least 2");
  if (!(eta >= 0)) throw std::invalid_argument("eta must be nonnegative");
  if (!(bound_k >= 1)) throw std::invalid_argument("bound_k must be at least 1");
  if (!(vc_v > 0) || !(vc_a >= 1)) throw std::invalid_argument("need v > 0 and A >= 1");

  switch (k_rule.type) {
    case KRule::Type::fixed:
      if (k_rule.value < 1 || k_rule.value > static_cast<double>(n_grid.front()))
        throw std::invalid_argument("fixed k must lie in [1, min n]");
      break;
    case KRule::Type::power:
      if (!(k_rule.value >= 0.0 && k_rule.value <= 1.0))
        throw std::invalid_argument("power k-rule exponent must lie in [0,1]");
      break;
    case KRule::Type::theorem_window:
      break;
  }

  const bool needs_functionals = kind != ExperimentKind::radius_concentration;
  if (needs_functionals && functionals.empty())
    throw std::invalid_argument("functionals must not be empty for this experiment kind");

  switch (kind) {
    case ExperimentKind::radius_concentration:
      if (x_list.empty()) throw std::invalid_argument("radius_concentration needs x_list");
      break;
    case ExperimentKind::clt:
    case ExperimentKind::ci_coverage:
    case ExperimentKind::bias_bound:
      if (x_list.size() != 1)
        throw std::invalid_argument(kind_name(kind) + " needs exactly one x_list entry");
      break;
    case ExperimentKind::nw_contrast:
      if (x_list.size() != 2)
        throw std::invalid_argument("nw_contrast needs x_list = [x_low, x_high]");
      if (functionals.size() != 1)
        throw std::invalid_argument("nw_contrast uses exactly one functional");
      break;
    case ExperimentKind::rate_sweep:
    case ExperimentKind::bound_validity:
      break;
  }
}

long k_for(const ExperimentSpec& spec, const GroundTruth&, long n) {
  switch (spec.k_rule.type) {
    case KRule::Type::fixed:
      return static_cast<long>(spec.k_rule.value);
    case KRule::Type::power: {
      const long k = static_cast<long>(
          std::ceil(std::pow(static_cast<double>(n), spec.k_rule.value)));
      return std::clamp<long>(k, 1, n);
    }
    case KRule::Type::theorem_window:
      throw std::invalid_argument("theorem_window k depends on the experiment context");
  }
  return 1;
}

ExperimentSpec spec_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("spec must be a JSON object");
  ExperimentSpec spec;
  bool saw_kind = false, saw_model = false, saw_n = false, saw_rule = false, saw_reps = false,
       saw_seed = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "schema_version") {
      spec.schema_version = value.get<int>();
    } else if (key == "kind") {
      spec.kind = kind_from_name(value.get<std::string>());
      saw_kind = true;
    } else if (key == "model") {
      spec.model = value.get<std::string>();
      saw_model = true;
    } else if (key == "n_grid") {
      spec.n_grid = value.get<std::vector<long>>();
      saw_n = true;
    } else if (key == "k_rule") {
      if (!value.is_object()) throw std::invalid_argument("k_rule must be an object");
      bool saw_type = false;
      for (const auto& [rk, rv] : value.items()) {
        if (rk == "type") {
          const auto type = rv.get<std::string>();
          if (type == "fixed")
            spec.k_rule.type = KRule::Type::fixed;
          else if (type == "power")
            spec.k_rule.type = KRule::Type::power;
          else if (type == "theorem_window")
            spec.k_rule.type = KRule::Type::theorem_window;
          else
            throw std::invalid_argument("unknown k_rule type: " + type);
          saw_type = true;
        } else if (rk == "value") {
          spec.k_rule.value = rv.get<double>();
        } else {
          throw std::invalid_argument("unknown k_rule field: " + rk);
        }
      }
      if (!saw_type) throw std::invalid_argument("k_rule.type is required");
      saw_rule = true;
    } else if (key == "replications") {
      spec.replications = value.get<int>();
      saw_reps = true;
    } else if (key == "delta") {
      spec.delta = value.get<double>();
    } else if (key == "level") {
      spec.level = value.get<double>();
    } else if (key == "x_list") {
      spec.x_list = value.get<std::vector<std::vector<double>>>();
    } else if (key == "functionals") {
      spec.functionals = value.get<std::vector<std::string>>();
    } else if (key == "seed") {
      spec.seed = value.get<std::uint64_t>();
      saw_seed = true;
    } else if (key == "out") {
      spec.out = value.get<std::string>();
    } else if (key == "x_grid") {
      spec.x_grid = value.get<int>();
    } else if (key == "interior_only") {
      spec.interior_only = value.get<bool>();
    } else if (key == "eta") {
      spec.eta = value.get<double>();
    } else if (key == "bound_k") {
      spec.bound_k = value.get<double>();
    } else if (key == "vc") {
      if (!value.is_object()) throw std::invalid_argument("vc must be an object");
      for (const auto& [vk, vv] : value.items()) {
        if (vk == "v")
          spec.vc_v = vv.get<double>();
        else if (vk == "A")
          spec.vc_a = vv.get<double>();
        else
          throw std::invalid_argument("unknown vc field: " + vk);
      }
    } else if (key == "modulus_grid") {
      spec.modulus_grid = value.get<int>();
    } else {
      throw std::invalid_argument("unknown spec field: " + key);
    }
  }
  if (!saw_kind || !saw_model || !saw_n || !saw_rule || !saw_reps || !saw_seed)
    throw std::invalid_argument(
        "spec requires kind, model, n_grid, k_rule, replications and seed");
  spec.validate();
  return spec;
}

json spec_to_json(const ExperimentSpec& spec) {
  const char* rule = spec.k_rule.type == KRule::Type::fixed
                         ? "fixed"
                         : spec.k_rule.type == KRule::Type::power ? "power" : "theorem_window";
  return json{{"schema_version", spec.schema_version},
              {"kind", kind_name(spec.kind)},
              {"model", spec.model},
              {"n_grid", spec.n_grid},
              {"k_rule", {{"type", rule}, {"value", spec.k_rule.value}}},
              {"replications", spec.replications},
              {"delta", spec.delta},
              {"level", spec.level},
              {"x_list", spec.x_list},
              {"functionals", spec.functionals},
              {"seed", spec.seed},
              {"out", spec.out},
              {"x_grid", spec.x_grid},
              {"interior_only", spec.interior_only},
              {"eta", spec.eta},
              {"bound_k", spec.bound_k},
              {"vc", {{"v", spec.vc_v}, {"A", spec.vc_a}}},
              {"modulus_grid", spec.modulus_grid}};
}

ExperimentSpec load_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open spec file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("spec file is not valid JSON: ") + e.what());
  }
  return spec_from_json(j);
}

std::vector<std::vector<double>> build_x_grid(const GroundTruth& truth, int per_axis,
                                              double margin) {
  const int d = truth.dim;
  const int sweep_axes = std::min(d, 2);
  std::vector<std::vector<double>> grid;
  std::vector<double> z(static_cast<std::size_t>(d));
  for (int j = sweep_axes; j < d; ++j) {
    const auto [lo, hi] = truth.support_interval(j);
    z[static_cast<std::size_t>(j)] = 0.5 * (lo + hi);
  }
  auto axis_value = [&](int axis, int i) {
    auto [lo, hi] = truth.support_interval(axis);
    lo += margin;
    hi -= margin;
    if (hi < lo) hi = lo = 0.5 * (lo + hi);
    return lo + (hi - lo) * i / (per_axis - 1);
  };
  if (sweep_axes == 1) {
    for (int i = 0; i < per_axis; ++i) {
      z[0] = axis_value(0, i);
      grid.push_back(z);
    }
    return grid;
  }
  for (int i0 = 0; i0 < per_axis; ++i0) {
    z[0] = axis_value(0, i0);
    for (int i1 = 0; i1 < per_axis; ++i1) {
      z[1] = axis_value(1, i1);
      grid.push_back(z);
    }
  }
  return grid;
}

nlohmann::json aggregate_rows(const ExperimentSpec& spec,
                              const std::vector<std::string>& columns,
                              const std::vector<std::vector<double>>& rows) {
  const RunContext ctx = build_run_context(spec);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < columns.size(); ++i) col[columns[i]] = i;
  auto column = [&](const std::string& name) {
    const auto it = col.find(name);
    if (it == col.end()) throw std::invalid_argument("missing column: " + name);
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r[it->second]);
    return v;
  };
  auto rows_for_n = [&](long n, const std::string& name) {
    const std::size_t ci = col.at(name);
    std::vector<double> v;
    for (const auto& r : rows)
      if (static_cast<long>(r[0]) == n) v.push_back(r[ci]);
    return v;
  };

  json agg;
  agg["rows"] = rows.size();

  switch (spec.kind) {
    case ExperimentKind::radius_concentration: {
      std::vector<double> pooled;
      json by_x = json::array();
      for (std::size_t i = 0; i < spec.x_list.size(); ++i) {
        auto v = column("ratio_d_x" + std::to_string(i));
        pooled.insert(pooled.end(), v.begin(), v.end());
        by_x.push_back(median(std::move(v)));
      }
      agg["median_ratio_d_by_x"] = by_x;
      agg["median_ratio_d"] = median(std::move(pooled));
      agg["violation_freq"] = mean(column("violation"));
      json regime = json::array();
      for (const auto& nc : ctx.per_n)
        regime.push_back({{"n", nc.n}, {"outside_regime", nc.k == nc.n}});
      agg["regime_by_n"] = regime;
      break;
    }
    case ExperimentKind::clt: {
      json per_g = json::object();
      std::vector<std::vector<double>> zs;
      for (std::size_t gi = 0; gi < spec.functionals.size(); ++gi) {
        const auto& id = spec.functionals[gi];
        auto z = column("z_" + id);
        json entry;
        entry["ks_distance"] = ks_distance_normal(z);
        entry["z_mean"] = mean(z);
        entry["z_variance"] = z.size() > 1 ? json(sample_variance(z)) : json();
        entry["coverage"] = mean(column("covered_" + id));
        per_g[id] = entry;
        zs.push_back(std::move(z));
      }
      agg["per_functional"] = per_g;
      if (spec.functionals.size() > 1) {
        json pairs = json::array();
        for (std::size_t i = 0; i < zs.size(); ++i)
          for (std::size_t j = i + 1; j < zs.size(); ++j) {
            const double analytic =
                ctx.truth.cond_cov(ctx.gs[i], ctx.gs[j], spec.x_list[0]) /
                std::sqrt(ctx.per_n.back().cov_x[0][i] * ctx.per_n.back().cov_x[0][j]);
            pairs.push_back({{"g1", spec.functionals[i]},
                             {"g2", spec.functionals[j]},
                             {"corr", pearson(zs[i], zs[j])},
                             {"corr_analytic", analytic}});
          }
        agg["pairs"] = pairs;
      }
      break;
    }
    case ExperimentKind::ci_coverage: {
      json per_g = json::object();
      for (const auto& id : spec.functionals) {
        per_g[id] = {{"coverage", mean(column("covered_" + id))},
                     {"mean_half_width", mean(column("halfwidth_" + id))}};
      }
      agg["per_functional"] = per_g;
      agg["level"] = spec.level;
      break;
    }
    case ExperimentKind::rate_sweep:
    case ExperimentKind::bound_validity: {
      json by_n = json::array();
      std::vector<double> log_n, log_k, log_err;
      for (const auto& nc : ctx.per_n) {
        if (nc.skipped) {
          by_n.push_back({{"n", nc.n}, {"skipped", true}});
          continue;
        }
        const auto errs = rows_for_n(nc.n, "sup_err");
        if (errs.empty()) continue;
        const double m = mean(errs);
        by_n.push_back({{"n", nc.n}, {"k", nc.k}, {"mean_sup_err", m}});
        if (m > 0) {
          log_n.push_back(std::log(static_cast<double>(nc.n)));
          log_k.push_back(std::log(static_cast<double>(nc.k)));
          log_err.push_back(std::log(m));
        }
      }
      agg["mean_err_by_n"] = by_n;
      if (log_n.size() >= 3) {
        const SlopeFit vs_n = least_squares_slope(log_n, log_err);
        agg["slope_vs_n"] = {{"slope", vs_n.slope}, {"stderr", vs_n.slope_stderr}};
        const auto [k_lo, k_hi] = std::minmax_element(log_k.begin(), log_k.end());
        if (*k_lo < *k_hi) {
          const SlopeFit vs_k = least_squares_slope(log_k, log_err);
          agg["slope_vs_k"] = {{"slope", vs_k.slope}, {"stderr", vs_k.slope_stderr}};
        }
      }
      if (spec.kind == ExperimentKind::bound_validity) {
        bool any = false, all_skipped = true;
        for (const auto& nc : ctx.per_n) {
          any = true;
          all_skipped = all_skipped && nc.skipped;
        }
        agg["window_empty"] = any && all_skipped;
        if (!rows.empty()) agg["violation_freq"] = mean(column("violated"));
      }
      break;
    }
    case ExperimentKind::nw_contrast: {
      auto var_skipping_nan = [](const std::vector<double>& v) -> json {
        std::vector<double> kept;
        for (double x : v)
          if (std::isfinite(x)) kept.push_back(x);
        if (kept.size() < 2) return json();
        return sample_variance(kept);
      };
      const json var_knn_low = var_skipping_nan(column("knn_low"));
      const json var_knn_high = var_skipping_nan(column("knn_high"));
      const json var_nw_low = var_skipping_nan(column("nw_low"));
      const json var_nw_high = var_skipping_nan(column("nw_high"));
      agg["var_knn_low"] = var_knn_low;
      agg["var_knn_high"] = var_knn_high;
      agg["var_nw_low"] = var_nw_low;
      agg["var_nw_high"] = var_nw_high;
      if (var_knn_low.is_number() && var_knn_high.is_number())
        agg["knn_variance_ratio"] =
            var_knn_low.get<double>() / var_knn_high.get<double>();
      if (var_nw_low.is_number() && var_nw_high.is_number())
        agg["nw_variance_ratio"] = var_nw_low.get<double>() / var_nw_high.get<double>();
      const double f_low = ctx.truth.density(spec.x_list[0]);
      const double f_high = ctx.truth.density(spec.x_list[1]);
      agg["expected_nw_ratio"] = f_high / f_low;
      double empties = 0;
      for (double e : column("nw_empty_low")) empties += e;
      for (double e : column("nw_empty_high")) empties += e;
      agg["nw_empty_balls"] = empties;
      break;
    }
    case ExperimentKind::bias_bound: {
      json per_g = json::object();
      double overall = 0;
      for (const auto& id : spec.functionals) {
        const double freq = mean(column("violated_" + id));
        per_g[id] = {{"violation_freq", freq}};
        overall += freq;
      }
      agg["per_functional"] = per_g;
      agg["violation_freq"] = overall / static_cast<double>(spec.functionals.size());
      agg["eta"] = spec.eta;
      break;
    }
  }
  return agg;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, int workers) {
  spec.validate();
  const RunContext ctx = build_run_context(spec);
  const long reps = spec.replications;

  struct Task {
    std::size_t ni;
    long rep;
    std::uint64_t global_rep;
  };
  std::vector<Task> tasks;
  for (std::size_t ni = 0; ni < ctx.per_n.size(); ++ni) {
    if (ctx.per_n[ni].skipped) continue;
    for (long rep = 0; rep < reps; ++rep)
      tasks.push_back({ni, rep, static_cast<std::uint64_t>(ni) * reps + rep});
  }

  std::vector<std::vector<double>> rows(tasks.size());
  if (workers <= 0) workers = omp_get_max_threads();

  if (workers == 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t)
      rows[t] = replicate(spec, ctx, ctx.per_n[tasks[t].ni], tasks[t].rep, tasks[t].global_rep);
  } else {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (long t = 0; t < static_cast<long>(tasks.size()); ++t) {
      try {
        const Task& task = tasks[static_cast<std::size_t>(t)];
        rows[static_cast<std::size_t>(t)] =
            replicate(spec, ctx, ctx.per_n[task.ni], task.rep, task.global_rep);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  }

  ExperimentResult result;
  result.spec = spec;
  result.columns = columns_for(spec);
  result.rows = std::move(rows);
  for (const auto& row : result.rows)
    if (row.size() != result.columns.size())
      throw std::logic_error("replication record width does not match the column layout");
  result.constants = constants_for(spec, ctx);
  result.aggregates = aggregate_rows(spec, result.columns, result.rows);
  return result;
}

ExperimentResult run_experiment_serial(const ExperimentSpec& spec) {
  return run_experiment(spec, 1);
}

namespace {

ExperimentResult run_checked(const ExperimentSpec& spec, int workers, ExperimentKind kind) {
  if (spec.kind != kind)
    throw std::invalid_argument("spec kind is " + kind_name(spec.kind) + ", expected " +
                                kind_name(kind));
  return run_experiment(spec, workers);
}

}  // namespace

ExperimentResult run_radius_concentration(const ExperimentSpec& s, int w) {
  return run_checked(s, w, ExperimentKind::radius_concentration);
}
ExperimentResult run_clt(const ExperimentSpec& s, int w) {
  return run_checked(s, w, ExperimentKind::clt);
}
ExperimentResult run_ci_coverage(const ExperimentSpec& s, int w) {
  return run_checked(s, w, ExperimentKind::ci_coverage);
}
ExperimentResult run_rate_sweep(const ExperimentSpec& s, int w) {
  return run_checked(s, w, ExperimentKind::rate_sweep);
}
ExperimentResult run_nw_contrast(const ExperimentSpec& s, int w) {
  return run_checked(s, w, ExperimentKind::nw_contrast);
}
ExperimentResult run_bound_validity(const ExperimentSpec& s, int w) {
  return run_checked(s, w, ExperimentKind::bound_validity);
}
ExperimentResult run_bias_bound(const ExperimentSpec& s, int w) {
  return run_checked(s, w, ExperimentKind::bias_bound);
}

double calibrate_k_constant(const ExperimentSpec& spec, int workers) {
  if (spec.kind != ExperimentKind::bound_validity)
    throw std::invalid_argument("calibration needs a bound_validity spec");
  const ExperimentResult base = run_experiment(spec, workers);
  if (base.rows.empty()) throw std::invalid_argument("empty admissible window, nothing to fit");

  const RunContext ctx = build_run_context(spec);
  std::map<long, std::size_t> n_index;
  for (std::size_t ni = 0; ni < ctx.per_n.size(); ++ni) n_index[ctx.per_n[ni].n] = ni;

  const std::size_t err_col = 2;  // n, rep, sup_err, ...
  for (double k_big = 1.0; k_big <= 64.0; k_big += 0.5) {
    long violations = 0;
    for (const auto& row : base.rows) {
      const NContext& nc = ctx.per_n[n_index.at(static_cast<long>(row[0]))];
      BoundInputs in = base_bound_inputs(spec, ctx, nc.n, nc.k);
      in.big_k = k_big;
      if (row[err_col] > uniform_error_bound(in)) ++violations;
    }
    if (static_cast<double>(violations) <= spec.delta * static_cast<double>(base.rows.size()))
      return k_big;
  }
  throw NumericError("no K <= 64 makes the bound hold at the requested delta");
}

namespace {

void format_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

bool json_close(const json& a, const json& b, double tol) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    return std::abs(x - y) <= tol * std::max({1.0, std::abs(x), std::abs(y)});
  }
  if (a.type() != b.type()) return false;
  if (a.is_object()) {
    if (a.size() != b.size()) return false;
    for (const auto& [key, value] : a.items()) {
      if (!b.contains(key) || !json_close(value, b.at(key), tol)) return false;
    }
    return true;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!json_close(a[i], b[i], tol)) return false;
    return true;
  }
  return a == b;
}

}  // namespace

void write_result(const ExperimentResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);

  json root{{"schema_version", result.spec.schema_version},
            {"spec", spec_to_json(result.spec)},
            {"constants", result.constants},
            {"columns", result.columns},
            {"aggregates", result.aggregates}};
  std::ofstream out(dir + "/result.json");
  if (!out) throw std::runtime_error("cannot write " + dir + "/result.json");
  out << root.dump(2) << "\n";

  std::ofstream csv(dir + "/reps.csv");
  if (!csv) throw std::runtime_error("cannot write " + dir + "/reps.csv");
  std::string line = "# schema_version: 1\n";
  for (std::size_t i = 0; i < result.columns.size(); ++i) {
    line += result.columns[i];
    line += i + 1 == result.columns.size() ? '\n' : ',';
  }
  csv << line;
  for (const auto& row : result.rows) {
    line.clear();
    for (std::size_t i = 0; i < row.size(); ++i) {
      format_double(line, row[i]);
      line += i + 1 == row.size() ? '\n' : ',';
    }
    csv << line;
  }
}

ExperimentResult load_result(const std::string& dir) {
  std::ifstream in(dir + "/result.json");
  if (!in) throw std::runtime_error("cannot open " + dir + "/result.json");
  json root;
  in >> root;
  ExperimentResult result;
  result.spec = spec_from_json(root.at("spec"));
  result.constants = root.at("constants");
  result.aggregates = root.at("aggregates");
  result.columns = root.at("columns").get<std::vector<std::string>>();

  std::ifstream csv(dir + "/reps.csv");
  if (!csv) throw std::runtime_error("cannot open " + dir + "/reps.csv");
  std::string line;
  bool header_seen = false;
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      std::string expected;
      for (std::size_t i = 0; i < result.columns.size(); ++i) {
        expected += result.columns[i];
        if (i + 1 < result.columns.size()) expected += ',';
      }
      if (line != expected) throw std::runtime_error("reps.csv header does not match columns");
      header_seen = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(std::strtod(field.c_str(), nullptr));
    if (row.size() != result.columns.size())
      throw std::runtime_error("reps.csv row width does not match columns");
    result.rows.push_back(std::move(row));
  }

  const json recomputed = aggregate_rows(result.spec, result.columns, result.rows);
  if (!json_close(recomputed, result.aggregates, 1e-10))
    throw std::runtime_error("stored aggregates do not match the per-replication records");
  return result;
}

}  // namespace knnproc
