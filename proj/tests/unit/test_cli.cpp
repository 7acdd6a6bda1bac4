// Copyright 2026 The ccinekf Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "ccinekf/cli.hpp"
#include "ccinekf/eval.hpp"
#include "ccinekf/robot_model.hpp"
#include "ccinekf/sim.hpp"

namespace ccinekf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ccinekf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static int run(std::vector<std::string> args) {
    args.insert(args.begin(), "ccinekf");
    return cli::run(args);
  }

  static json load(const std::string& p) { return json::parse(read_file(p)); }

  fs::path dir_;
};

TEST_F(Cli, SimulateIsByteIdenticalAcrossRuns) {
  const std::vector<std::string> args = {"simulate", "--scenario", "gait", "--seed", "1",
                                         "--duration", "2", "--out", path("d.jsonl")};
  ASSERT_EQ(run(args), 0);
  const std::string first = read_file(path("d.jsonl"));
  ASSERT_EQ(run(args), 0);
  EXPECT_EQ(read_file(path("d.jsonl")), first);
  const json m = load(path("d.manifest.json"));
  EXPECT_EQ(m["command"], "simulate");
  EXPECT_EQ(m["seed"], 1);
  EXPECT_EQ(m["config"]["sim"]["duration"], 2.0);
  EXPECT_EQ(m["version"], cli::version());
  EXPECT_TRUE(fs::exists(path("d.meta.json")));
}

TEST_F(Cli, ConfigFileWithFlagOverrides) {
  SimConfig c;
  c.duration = 0.5;
  c.seed = 4;
  c.scenario = "ground";
  std::ofstream(path("sim.json")) << c.to_json().dump();
  ASSERT_EQ(run({"simulate", "--config", path("sim.json"), "--seed", "9", "--out",
                 path("d.jsonl")}),
            0);
  const json m = load(path("d.manifest.json"));
  EXPECT_EQ(m["config"]["sim"]["seed"], 9);
  EXPECT_EQ(m["config"]["sim"]["scenario"], "ground");
  EXPECT_EQ(EpisodeDataset::load(path("d.jsonl")).steps.size(), 100u);
}

TEST_F(Cli, GroundTruthBaselineOnGoldenDataset) {
  ASSERT_EQ(run({"simulate", "--seed", "31", "--noise-free", "--out", path("g.jsonl")}), 0);
  ASSERT_EQ(run({"eval", "--dataset", path("g.jsonl"), "--baseline", "gt-contacts",
                 "--out-dir", path("gt")}),
            0);
  const json r = load(path("gt/report.json"));
  EXPECT_LT(r["velocity"]["rmse"].get<double>(), 1e-3);
  EXPECT_EQ(r["method"], "gt-contacts");
  EXPECT_TRUE(fs::exists(path("gt/steps.csv")));
  EXPECT_TRUE(fs::exists(path("gt/errors.jsonl")));
  EXPECT_EQ(load(path("gt/manifest.json"))["command"], "eval");

  ASSERT_EQ(run({"eval", "--dataset", path("g.jsonl"), "--baseline", "heuristic",
                 "--out-dir", path("h")}),
            0);
  ASSERT_EQ(run({"compare", path("gt/report.json"), path("h/report.json"), "--out",
                 path("t.md")}),
            0);
  const std::string table = read_file(path("t.md"));
  EXPECT_NE(table.find("| gt-contacts |"), std::string::npos);
  EXPECT_NE(table.find("| heuristic |"), std::string::npos);
}

TEST_F(Cli, NeesCalibrationFixture) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix9d A;
  for (int i = 0; i < 81; ++i) A.data()[i] = n(rng);
  const Matrix9d P = A * A.transpose() + 0.05 * Matrix9d::Identity();
  const Matrix9d L = P.llt().matrixL();
  std::ofstream out(path("errors.jsonl"));
  for (int k = 0; k < 20000; ++k) {
    Vector9d z;
    for (int i = 0; i < 9; ++i) z[i] = n(rng);
    const Vector9d e = L * z;
    out << "{\"t\":" << format_double(0.005 * (k + 1)) << ",\"xi\":[";
    for (int i = 0; i < 9; ++i) out << (i ? "," : "") << format_double(e[i]);
    out << "],\"P\":[";
    for (int i = 0; i < 81; ++i) out << (i ? "," : "") << format_double(P(i / 9, i % 9));
    out << "]}\n";
  }
  out.close();
  ASSERT_EQ(run({"nees", "--errors", path("errors.jsonl"), "--out", path("n.csv")}), 0);
  const json s = load(path("n.summary.json"));
  EXPECT_GE(s["in_bounds_fraction"].get<double>(), 0.93);
  EXPECT_LE(s["in_bounds_fraction"].get<double>(), 0.97);
  EXPECT_EQ(s["evaluated"], 20000);
  EXPECT_NEAR(s["lower"].get<double>(), 2.70, 5e-3);
}

TEST_F(Cli, TrainEvalRoundTripIsReproducible) {
  const std::vector<std::string> args = {
      "train", "--iterations", "2", "--environments", "2", "--buffer-length", "8",
      "--history", "4", "--episode-length", "0.2", "--eval-every", "0", "--seed", "3",
      "--out-dir", path("t1")};
  ASSERT_EQ(run(args), 0);
  std::vector<std::string> again = args;
  again.back() = path("t2");
  ASSERT_EQ(run(again), 0);
  EXPECT_EQ(read_file(path("t1/checkpoint.json")), read_file(path("t2/checkpoint.json")));
  const json m = load(path("t1/manifest.json"));
  EXPECT_EQ(m["config"]["train"]["iterations"], 2);
  EXPECT_EQ(m["config"]["train"]["history"], 4);

  ASSERT_EQ(run({"simulate", "--duration", "0.5", "--out", path("d.jsonl")}), 0);
  ASSERT_EQ(run({"eval", "--dataset", path("d.jsonl"), "--checkpoint",
                 path("t1/checkpoint.json"), "--out-dir", path("e")}),
            0);
  EXPECT_EQ(load(path("e/report.json"))["method"], "learned");
}

TEST_F(Cli, SelectCandidatesWritesUsableModel) {
  ASSERT_EQ(run({"select-candidates", "--n", "4", "--bodies", "foot_l,foot_r", "--seed", "2",
                 "--out", path("c.json"), "--model-out", path("m.json")}),
            0);
  EXPECT_EQ(load(path("c.json"))["candidates"].size(), 4u);
  EXPECT_EQ(RobotModel::load(path("m.json")).num_candidates(), 4);
  EXPECT_EQ(run({"simulate", "--model", path("m.json"), "--duration", "0.2", "--out",
                 path("d.jsonl")}),
            0);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"bogus"}), 1);
  EXPECT_EQ(run({"simulate"}), 1);
  EXPECT_EQ(run({"simulate", "--duration", "-1", "--out", path("x.jsonl")}), 1);
  EXPECT_EQ(run({"eval", "--dataset", path("missing.jsonl"), "--baseline", "free",
                 "--out-dir", path("e")}),
            2);
  EXPECT_EQ(run({"eval", "--dataset", path("missing.jsonl"), "--out-dir", path("e")}), 1);
  EXPECT_EQ(run({"nees", "--errors", path("missing.jsonl"), "--out", path("n.csv")}), 2);
  EXPECT_FALSE(fs::exists(path("x.jsonl")));
}

}  // namespace
}  // namespace ccinekf
