#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"
#include "knnproc/bounds.hpp"
#include "knnproc/harness.hpp"
#include "knnproc/synthetic.hpp"

using namespace knnproc;
using nlohmann::json;

namespace {

struct RunOutput {
  int code = -1;
  std::string out;
};

RunOutput run_cli(const std::string& args) {
  const std::string cmd = std::string(KNNPROC_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunOutput result;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) result.out.append(buf, got);
  const int status = pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

const std::string kDir = "cli_test_out";

std::string write_data_csv() {
  std::filesystem::create_directories(kDir);
  const std::string path = kDir + "/data.csv";
  std::ofstream out(path);
  write_sample_csv(draw_sample(make_model("m1"), 400, {321, 0}), out);
  return path;
}

}  // namespace

TEST_CASE("estimate mean with a confidence interval") {
  const std::string data = write_data_csv();
  const RunOutput r =
      run_cli("estimate --data " + data + " --x 0.5 --k 50 --functional mean --level 0.95");
  REQUIRE(r.code == 0);
  const json out = json::parse(r.out);
  CHECK(out.at("k") == 50);
  CHECK(out.at("in_ball_count") == 50);
  CHECK(std::abs(out.at("estimate").get<double>()) < 0.5);  // sin(pi) = 0 plus noise
  CHECK(out.at("ci").at("half_width").get<double>() > 0.0);
  CHECK(out.at("radius").get<double>() > 0.0);
}

TEST_CASE("estimate cdf, quantile and loclin") {
  const std::string data = write_data_csv();
  const RunOutput cdf =
      run_cli("estimate --data " + data + " --x 0.25 --k 60 --functional cdf:1.0");
  REQUIRE(cdf.code == 0);
  const double p = json::parse(cdf.out).at("estimate").get<double>();
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);

  const RunOutput quant =
      run_cli("estimate --data " + data + " --x 0.25 --k 60 --functional quantile:0.5");
  REQUIRE(quant.code == 0);
  CHECK(std::abs(json::parse(quant.out).at("estimate").get<double>() - 1.0) < 1.0);

  const RunOutput fit = run_cli("estimate --data " + data +
                                " --x 0.25 --k 60 --functional loclin --sigma2 0.25");
  REQUIRE(fit.code == 0);
  const json out = json::parse(fit.out);
  CHECK(out.at("loclin").at("beta").size() == 1);
  CHECK_FALSE(out.at("loclin").at("rank_deficient").get<bool>());

  const RunOutput missing = run_cli("estimate --data " + data + " --x 0.25 --k 60 --functional loclin");
  CHECK(missing.code == 2);
}

TEST_CASE("experiment subcommand writes results with matching schema") {
  std::filesystem::create_directories(kDir);
  const json spec{{"schema_version", 1},
                  {"kind", "ci_coverage"},
                  {"model", "m1"},
                  {"n_grid", {1500}},
                  {"k_rule", {{"type", "power"}, {"value", 0.6}}},
                  {"replications", 20},
                  {"x_list", {{0.5}}},
                  {"functionals", {"identity"}},
                  {"seed", 4242}};
  std::ofstream(kDir + "/spec.json") << spec.dump(2);

  const RunOutput r = run_cli("experiment --spec " + kDir + "/spec.json --out " + kDir +
                              "/run1 --workers 2");
  REQUIRE(r.code == 0);
  const json summary = json::parse(r.out);
  CHECK(summary.at("rows") == 20);

  const ExperimentResult loaded = load_result(kDir + "/run1");
  CHECK(loaded.rows.size() == 20);
  CHECK(loaded.spec.seed == 4242);

  std::ifstream csv(kDir + "/run1/reps.csv");
  std::string first;
  std::getline(csv, first);
  CHECK(first == "# schema_version: 1");
  const json root = json::parse(std::ifstream(kDir + "/run1/result.json"));
  CHECK(root.at("schema_version") == 1);

  // --seed override changes the records
  const RunOutput r2 = run_cli("experiment --spec " + kDir + "/spec.json --out " + kDir +
                               "/run2 --workers 2 --seed 7");
  REQUIRE(r2.code == 0);
  CHECK(load_result(kDir + "/run2").spec.seed == 7);
}

TEST_CASE("invalid specs exit with code 2") {
  std::filesystem::create_directories(kDir);
  std::ofstream(kDir + "/bad.json") << "{\"kind\": \"clt\", \"mystery\": 1}";
  CHECK(run_cli("experiment --spec " + kDir + "/bad.json --out " + kDir + "/bad").code == 2);

  std::ofstream(kDir + "/notjson.json") << "not json at all";
  CHECK(run_cli("experiment --spec " + kDir + "/notjson.json --out " + kDir + "/bad").code == 2);

  CHECK(run_cli("experiment --spec " + kDir + "/absent.json --out " + kDir + "/bad").code == 2);
  CHECK(run_cli("estimate --data " + kDir + "/absent.csv --x 0.5 --k 5").code == 2);
  CHECK(run_cli("bogus-subcommand").code == 2);
}

TEST_CASE("numeric failures exit with code 3") {
  std::filesystem::create_directories(kDir);
  std::ofstream(kDir + "/inf.csv") << "x_1,y\n0.1,1.0\n0.2,inf\n0.3,2.0\n";
  CHECK(run_cli("estimate --data " + kDir + "/inf.csv --x 0.15 --k 3 --functional mean").code ==
        3);
}

TEST_CASE("bounds subcommand matches the library") {
  const RunOutput r = run_cli(
      "bounds --formula uniform-error --d 1 --n 10000 --k 500 --delta 0.05 --v 2 --A 2 "
      "--sigma-g2 0.25 --L 5.0 --b 1 --U 1 --c 0.5 --T 0.5 --Vd 2 --K 1");
  REQUIRE(r.code == 0);
  BoundInputs in;
  in.d = 1;
  in.n = 10000;
  in.k = 500;
  in.delta = 0.05;
  in.vc_v = 2;
  in.vc_a = 2;
  in.sigma_g2 = 0.25;
  in.lipschitz = 5.0;
  in.support_c = 0.5;
  in.support_horizon = 0.5;
  CHECK(json::parse(r.out).at("value").get<double>() ==
        doctest::Approx(uniform_error_bound(in)).epsilon(1e-12));

  const RunOutput w = run_cli("bounds --formula window --d 1 --n 1000000 --delta 0.05");
  REQUIRE(w.code == 0);
  CHECK(json::parse(w.out).at("k_min").get<double>() ==
        doctest::Approx(479.74311988478905).epsilon(1e-10));
}

TEST_CASE("calibrate subcommand returns a usable constant") {
  std::filesystem::create_directories(kDir);
  const json spec{{"schema_version", 1},
                  {"kind", "bound_validity"},
                  {"model", "m1"},
                  {"n_grid", {4000}},
                  {"k_rule", {{"type", "fixed"}, {"value", 250}}},
                  {"replications", 30},
                  {"functionals", {"cdf:-0.5", "cdf:0.0", "cdf:0.5"}},
                  {"x_grid", 31},
                  {"seed", 5555}};
  std::ofstream(kDir + "/cal.json") << spec.dump(2);
  const RunOutput r = run_cli("calibrate-k-constant --spec " + kDir + "/cal.json --workers 2");
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out).at("K").get<double>() >= 1.0);
}
