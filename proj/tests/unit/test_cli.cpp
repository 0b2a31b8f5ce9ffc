#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "conformal_kit/cli.hpp"

using namespace ckit;

namespace {

std::filesystem::path scratch() {
  auto p = std::filesystem::temp_directory_path() / "ckit_cli_tests";
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int rc = run_cli(args, o, e);
  if (out) *out = o.str();
  return rc;
}

std::vector<std::string> small_simulate(const std::string& prefix) {
  return {"simulate", "--dgp", "3", "--d", "1", "--n", "60", "--n-tr", "120", "--n-te", "10",
          "--reps", "2", "--methods", "scp,cqr", "--seed", "7", "--quiet", "--out", prefix};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("simulate writes one row per method") {
  const std::string prefix = (scratch() / "a").string();
  REQUIRE(run(small_simulate(prefix)) == 0);
  const std::string csv = slurp(prefix + "_metrics.csv");
  std::istringstream lines(csv);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line))
    if (!line.empty()) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].rfind("method,", 0) == 0);
  CHECK(rows[1].rfind("scp,", 0) == 0);
  CHECK(rows[2].rfind("cqr,", 0) == 0);
  const std::string json = slurp(prefix + "_summary.json");
  CHECK(json.find("\"version\"") != std::string::npos);
  CHECK(json.find("\"simulate\"") != std::string::npos);
}

TEST_CASE("reruns are byte-identical and independent of --jobs") {
  const std::string a = (scratch() / "r1").string();
  const std::string b = (scratch() / "r2").string();
  REQUIRE(run(small_simulate(a)) == 0);
  auto args = small_simulate(b);
  args.push_back("--jobs");
  args.push_back("2");
  REQUIRE(run(args) == 0);
  CHECK(slurp(a + "_metrics.csv") == slurp(b + "_metrics.csv"));
  CHECK(slurp(a + "_summary.json") == slurp(b + "_summary.json"));
}

TEST_CASE("exit codes") {
  const std::string prefix = (scratch() / "e").string();
  auto bad = small_simulate(prefix);
  bad.push_back("--alpha");
  bad.push_back("2");
  CHECK(run(bad) == 2);
  auto unknown = small_simulate(prefix);
  unknown[14] = "scp,nope";
  CHECK(run(unknown) == 2);
  CHECK(run({}) == 2);
  CHECK(run({"simulate", "--no-such-flag"}) == 2);
  CHECK(run(small_simulate("/nonexistent_dir_ckit/x")) == 1);
}

TEST_CASE("config files") {
  const auto dir = scratch();
  {
    std::ofstream f(dir / "bad.json");
    f << R"({"alpha": 0.1, "mystery": 3})";
  }
  CHECK(run({"simulate", "--config", (dir / "bad.json").string(), "--out", (dir / "c").string(),
             "--quiet"}) == 2);
  {
    std::ofstream f(dir / "good.json");
    f << R"({"alpha": 0.2, "reps": 1, "methods": ["scp"],
             "dgp": {"dgp": 3, "d": 1, "n": 40, "n_tr": 80, "n_te": 5, "seed": 3}})";
  }
  const std::string prefix = (dir / "g").string();
  REQUIRE(run({"simulate", "--config", (dir / "good.json").string(), "--out", prefix, "--quiet"}) ==
          0);
  const std::string json = slurp(prefix + "_summary.json");
  CHECK(json.find("\"alpha\": 0.2") != std::string::npos);
}

TEST_CASE("seed falls back to the environment") {
  const auto dir = scratch();
  std::vector<std::string> base{"simulate", "--dgp", "3", "--d", "1", "--n", "40", "--n-tr", "80",
                                "--n-te", "5", "--reps", "1", "--methods", "scp", "--quiet",
                                "--out"};
  auto a = base;
  a.push_back((dir / "s1").string());
  auto b = base;
  b.push_back((dir / "s2").string());
  auto c = base;
  c.push_back((dir / "s3").string());
  ::setenv("CONFORMAL_KIT_SEED", "21", 1);
  REQUIRE(run(a) == 0);
  REQUIRE(run(b) == 0);
  ::setenv("CONFORMAL_KIT_SEED", "22", 1);
  REQUIRE(run(c) == 0);
  ::unsetenv("CONFORMAL_KIT_SEED");
  CHECK(slurp(dir / "s1_metrics.csv") == slurp(dir / "s2_metrics.csv"));
  CHECK(slurp(dir / "s1_metrics.csv") != slurp(dir / "s3_metrics.csv"));
}

TEST_CASE("other subcommands run") {
  const auto dir = scratch();
  CHECK(run({"pvalue", "--reps", "20", "--methods", "scp", "--quiet", "--seed", "1", "--out",
             (dir / "p").string()}) == 0);
  CHECK(run({"decompose", "--dgp", "3", "--d", "1", "--n", "60", "--n-tr", "120", "--n-te", "5",
             "--quiet", "--seed", "1", "--out", (dir / "d").string()}) == 0);
  CHECK(run({"hier", "--reps", "2", "--branches", "6", "--per-branch", "5", "--quiet", "--seed",
             "1", "--out", (dir / "h").string()}) == 0);
  CHECK(run({"graph", "--reps", "1", "--tests-per-block", "2", "--quiet", "--seed", "1", "--out",
             (dir / "gr").string()}) == 0);
}

}  // TEST_SUITE
