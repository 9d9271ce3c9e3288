// Timing comparison of the fast paths against their serial references:
// kd-tree queries vs the brute-force scan, and the OpenMP experiment
// runner vs the plain loop.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "knnproc/geometry.hpp"
#include "knnproc/harness.hpp"

using namespace knnproc;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void bench_queries(int n, int d, int k, int queries) {
  std::mt19937_64 gen(1234);
  std::uniform_real_distribution<double> unif(0, 1);
  std::vector<double> pts(static_cast<std::size_t>(n) * d);
  for (auto& p : pts) p = unif(gen);
  const PointCloud cloud(std::move(pts), d);
  const Norm norm = make_norm("euclidean", d);

  std::vector<std::vector<double>> xs(queries, std::vector<double>(d));
  for (auto& x : xs)
    for (auto& c : x) c = unif(gen);

  auto t0 = std::chrono::steady_clock::now();
  double sink = 0;
  for (const auto& x : xs) sink += knn_radius(cloud, x, k, norm).radius;
  const double tree_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  double sink2 = 0;
  for (const auto& x : xs) sink2 += knn_radius_brute(cloud, x, k, norm).radius;
  const double brute_s = seconds_since(t0);

  std::printf("%8d %3d %5d | %9.1f q/s %12.1f q/s %8.1fx  (check %.3g)\n", n, d, k,
              queries / tree_s, queries / brute_s, brute_s / tree_s, sink - sink2);
}

void bench_runner() {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::clt;
  spec.model = "m1";
  spec.n_grid = {20000};
  spec.k_rule = {KRule::Type::power, 0.6};
  spec.replications = 200;
  spec.x_list = {{0.5}};
  spec.functionals = {"identity"};
  spec.seed = 99;

  auto t0 = std::chrono::steady_clock::now();
  run_experiment_serial(spec);
  const double serial_s = seconds_since(t0);

  const int threads = omp_get_max_threads();
  t0 = std::chrono::steady_clock::now();
  run_experiment(spec, threads);
  const double parallel_s = seconds_since(t0);

  std::printf("\nexperiment runner (clt, n=20000, R=200):\n");
  std::printf("  serial   %6.2f s\n", serial_s);
  std::printf("  %2d-thread %6.2f s  (%.2fx)\n", threads, parallel_s, serial_s / parallel_s);
}

}  // namespace

int main() {
  std::printf("knn radius queries: kd-tree vs brute-force reference\n");
  std::printf("%8s %3s %5s | %9s %12s %8s\n", "n", "d", "k", "tree", "brute", "speedup");
  bench_queries(10000, 2, 16, 2000);
  bench_queries(10000, 3, 64, 2000);
  bench_queries(100000, 2, 16, 500);
  bench_queries(100000, 3, 256, 500);
  bench_runner();
  return 0;
}
