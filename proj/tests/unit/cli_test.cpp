#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "lesionrisk/pipeline.hpp"
#include "test_support.hpp"

namespace lesionrisk {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(LESIONRISK_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), got);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::path(::testing::TempDir()) / "lesionrisk_cli";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static fs::path dir_;
};

fs::path Cli::dir_;

TEST_F(Cli, FullWorkflowWithSingletonGrids) {
  const auto data = (dir_ / "data.csv").string();
  const auto bundle = (dir_ / "bundle.json").string();
  auto r = run("synth --n 1500 --seed 3 --out " + data);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_TRUE(fs::exists(data + ".oracle.json"));
  r = run("train --data " + data + " --split random --seed 1 --cs 1 --out " + bundle);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  r = run("calibrate --bundle " + bundle + " --data " + data + " --alpha 0.1 --fraction 0.5 --seed 2 --depths 2 " +
          "--min-leaves 40");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto b = load_bundle_file(bundle);
  ASSERT_TRUE(b.calibrated());
  EXPECT_EQ(b.metadata.at("tree_grid_search").at("cells").size(), 1u);
  EXPECT_EQ(b.metadata.at("grid_search").at("cells").size(), 1u);

  const auto reports = (dir_ / "reports").string();
  r = run("evaluate --bundle " + bundle + " --data " + data + " --out-dir " + reports + " --optimize-threshold");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_TRUE(fs::exists(fs::path(reports) / "coverage.csv"));
  EXPECT_TRUE(fs::exists(fs::path(reports) / "threshold_decision.json"));

  const auto input = (dir_ / "record.json").string();
  std::ofstream(input) << to_json(testing::suspicious_record()).dump();
  r = run("predict --bundle " + bundle + " --input " + input);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto j = nlohmann::json::parse(r.output);
  EXPECT_EQ(j, to_json(predict(b, testing::suspicious_record())));

  auto bad = to_json(testing::suspicious_record());
  bad["age"] = 17;
  std::ofstream(input) << bad.dump();
  r = run("predict --bundle " + bundle + " --input " + input);
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("age"), std::string::npos) << r.output;
}

TEST_F(Cli, MissingInputsFailWithNonZeroExit) {
  EXPECT_NE(run("train --data " + (dir_ / "missing.csv").string() + " --out " + (dir_ / "x.json").string()).exit_code,
            0);
  const auto truncated = (dir_ / "truncated.json").string();
  std::ofstream(truncated) << "{\"schema_version\": 1, \"risk";
  const auto r = run("predict --bundle " + truncated + " --input " + truncated);
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(run("no-such-command").exit_code, 0);
}

}  // namespace
}  // namespace lesionrisk
