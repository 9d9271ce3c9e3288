#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnproc/bounds.hpp"
#include "knnproc/synthetic.hpp"

namespace knnproc {

enum class ExperimentKind {
  radius_concentration,
  clt,
  ci_coverage,
  rate_sweep,
  nw_contrast,
  bound_validity,
  bias_bound,
};

std::string kind_name(ExperimentKind kind);
ExperimentKind kind_from_name(const std::string& name);

struct KRule {
  enum class Type { fixed, power, theorem_window };
  Type type = Type::power;
  double value = 0.5;  // fixed: k itself; power: exponent a in k = ceil(n^a)
};

// One Monte Carlo experiment, mirroring the JSON spec file one to one.
// Unknown JSON fields are rejected.
struct ExperimentSpec {
  int schema_version = 1;
  ExperimentKind kind = ExperimentKind::clt;
  std::string model = "m1";
  std::vector<long> n_grid;
  KRule k_rule;
  int replications = 1;
  double delta = 0.05;
  double level = 0.95;
  std::vector<std::vector<double>> x_list;
  std::vector<std::string> functionals;
  std::uint64_t seed = 0;
  std::string out;  // default output directory; CLI --out overrides

  int x_grid = 101;           // lattice points per axis for sup-over-x sweeps
  bool interior_only = false; // shrink the sweep lattice inward by tau_bar
  double eta = 0.1;           // bias-bound radius inflation
  double bound_k = 1.0;       // K plugged into the uniform error bound
  double vc_v = 2.0;          // VC parameters of the functional class
  double vc_a = 2.0;
  int modulus_grid = 512;

  void validate() const;
};

ExperimentSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const ExperimentSpec& spec);
ExperimentSpec load_spec_file(const std::string& path);

// Per-replication records plus derived aggregates. Rows are one per
// (n-grid entry, replication), keyed by the leading "n" and "rep" columns;
// aggregates are recomputed from the rows on load and must match.
struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  nlohmann::json constants;   // exact model/bound constants used
  nlohmann::json aggregates;
};

long k_for(const ExperimentSpec& spec, const GroundTruth& truth, long n);

// Runs replications in parallel with OpenMP (workers <= 0 picks the
// hardware default). Records are keyed by replication id and merged in id
// order, so the output is byte-identical for any worker count.
ExperimentResult run_experiment(const ExperimentSpec& spec, int workers = 0);

// Plain-loop reference runner; same output as run_experiment.
ExperimentResult run_experiment_serial(const ExperimentSpec& spec);

ExperimentResult run_radius_concentration(const ExperimentSpec& spec, int workers = 0);
ExperimentResult run_clt(const ExperimentSpec& spec, int workers = 0);
ExperimentResult run_ci_coverage(const ExperimentSpec& spec, int workers = 0);
ExperimentResult run_rate_sweep(const ExperimentSpec& spec, int workers = 0);
ExperimentResult run_nw_contrast(const ExperimentSpec& spec, int workers = 0);
ExperimentResult run_bound_validity(const ExperimentSpec& spec, int workers = 0);
ExperimentResult run_bias_bound(const ExperimentSpec& spec, int workers = 0);

// Smallest K on the grid {1, 1.5, 2, ...} for which the uniform bound is
// violated in at most a delta fraction of the replications.
double calibrate_k_constant(const ExperimentSpec& spec, int workers = 0);

nlohmann::json aggregate_rows(const ExperimentSpec& spec,
                              const std::vector<std::string>& columns,
                              const std::vector<std::vector<double>>& rows);

// result.json + reps.csv under dir (created if missing).
void write_result(const ExperimentResult& result, const std::string& dir);
// Reads both files back and re-derives the aggregates from the rows;
// throws if they disagree beyond 1e-10.
ExperimentResult load_result(const std::string& dir);

// Deterministic sweep lattice: x_grid points per axis over the support
// (the first two axes when dim > 2, others pinned at the midpoint),
// optionally shrunk inward by margin.
std::vector<std::vector<double>> build_x_grid(const GroundTruth& truth, int per_axis,
                                              double margin);

}  // namespace knnproc
