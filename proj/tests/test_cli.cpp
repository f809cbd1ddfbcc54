#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "schmidt_scope/experiments.hpp"

namespace schmidt_scope {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
};

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("schmidt_scope_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args, const std::string& env = "") {
  const auto out = scratch() / "stdout.txt";
  const std::string cmd = env + " " + SCHMIDT_SCOPE_CLI + " " + args + " > " + out.string() + " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string write_file(const std::string& name, const std::string& text) {
  const auto p = scratch() / name;
  std::ofstream(p) << text;
  return p.string();
}

TEST(Cli, SurveySeedPrecedence) {
  const std::string base = "survey --d 2 --samples 40";
  const auto flag = run(base + " --seed 5", "SCHMIDT_SCOPE_SEED=9");
  const auto env = run(base, "SCHMIDT_SCOPE_SEED=9");
  const auto flag_only = run(base + " --seed 5");
  const auto none = run(base, "env -u SCHMIDT_SCOPE_SEED");
  ASSERT_EQ(flag.code, 0);
  ASSERT_EQ(env.code, 0);
  ASSERT_EQ(none.code, 0);
  EXPECT_EQ(nlohmann::json::parse(flag.out)["seed"], 5);
  EXPECT_EQ(nlohmann::json::parse(env.out)["seed"], 9);
  EXPECT_EQ(nlohmann::json::parse(none.out)["seed"], 0);
  EXPECT_EQ(nlohmann::json::parse(flag.out)["cells"], nlohmann::json::parse(flag_only.out)["cells"]);
}

TEST(Cli, SurveyDeterministicAcrossWorkers) {
  const auto a = run("survey --d 3 --samples 60 --seed 3 --workers 1");
  const auto b = run("survey --d 3 --samples 60 --seed 3 --workers 4");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(nlohmann::json::parse(a.out)["cells"], nlohmann::json::parse(b.out)["cells"]);
}

TEST(Cli, SurveyCsvAndConfigFile) {
  const auto cfg = write_file("survey.json", R"({"d": 2, "measure": "bures", "samples": 25, "seed": 4})");
  const auto r = run("survey --config " + cfg + " --format csv", "env -u SCHMIDT_SCOPE_SEED");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("cell,count,fraction,ci95_low,ci95_high\n", 0), 0u);
  const auto j = run("survey --config " + cfg, "env -u SCHMIDT_SCOPE_SEED");
  EXPECT_EQ(nlohmann::json::parse(j.out)["seed"], 4);
  EXPECT_EQ(nlohmann::json::parse(j.out)["measure"], "bures");
}

TEST(Cli, ScanCsvSchema) {
  const auto r = run("scan --target psi2 --d 2 --grid 0:1:3 --tolerance 1e-3 --format csv");
  ASSERT_EQ(r.code, 0);
  std::istringstream is(r.out);
  const auto grid = read_scan_csv(is);
  ASSERT_EQ(grid.size(), 3u);
  EXPECT_EQ(grid[1].p, 0.5);
}

TEST(Cli, ScanRejectsTinyTolerance) {
  EXPECT_EQ(run("scan --target psi2 --d 2 --tolerance 1e-8").code, 2);
}

TEST(Cli, CertifyExitCodes) {
  std::ostringstream os;
  write_state(maximally_mixed(2, 2), os);
  const auto good = write_file("mixed.json", os.str());
  const auto ok = run("certify " + good + " --restarts 4");
  ASSERT_EQ(ok.code, 0);
  const auto j = nlohmann::json::parse(ok.out);
  for (const auto& v : j["verdicts"]) EXPECT_EQ(v["band"], "inside") << v["criterion"];

  EXPECT_EQ(run("certify " + write_file("garbage.json", "{not json")).code, 2);
  EXPECT_EQ(run("certify " + write_file("trace.json", R"({"d_a":1,"d_b":1,"re":[[2.0]]})")).code, 2);
  EXPECT_EQ(run("certify /nonexistent/state.json").code, 2);
  EXPECT_EQ(run("certify " + good + " --format csv").code, 2);
  // A DPS level far beyond the memory cap is reported as a solver failure.
  std::ostringstream big;
  write_state(maximally_mixed(3, 3), big);
  EXPECT_EQ(run("certify " + write_file("mixed3.json", big.str()) + " --k 40 --no-witness").code, 3);
}

TEST(Cli, BadFlagsAreMalformedInput) {
  EXPECT_EQ(run("survey --samples 0").code, 2);
  EXPECT_EQ(run("survey --measure nope").code, 2);
  EXPECT_EQ(run("survey --bogus").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("survey --samples 3", "SCHMIDT_SCOPE_SEED=abc").code, 2);
}

TEST(Cli, WitnessOnBellState) {
  std::ostringstream os;
  write_state(projector_state(maximally_entangled(2)), os);
  const auto r = run("witness " + write_file("bell.json", os.str()) + " --restarts 4");
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(nlohmann::json::parse(r.out)["violation"].get<double>(), 0.5, 1e-9);
}

}  // namespace
}  // namespace schmidt_scope
