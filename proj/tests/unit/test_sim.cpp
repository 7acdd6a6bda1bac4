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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "ccinekf/errors.hpp"
#include "ccinekf/filter.hpp"
#include "ccinekf/liegroup.hpp"
#include "ccinekf/robot_model.hpp"
#include "ccinekf/sim.hpp"

namespace ccinekf {
namespace {

SimConfig static_config() {
  SimConfig c = SimConfig::noise_free("gait", 3);
  c.duration = 1.0;
  c.randomize = false;
  c.gait = GaitParams{0.0, 0.0, 0.6, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  return c;
}

TEST(GroundTruthContact, TableThresholds) {
  EXPECT_TRUE(ground_truth_contact(0.0, 0.0));
  EXPECT_FALSE(ground_truth_contact(0.26, 0.0));
  EXPECT_TRUE(ground_truth_contact(0.25, 0.01));
  EXPECT_FALSE(ground_truth_contact(0.0, 0.0101));
}

TEST(Simulate, StaticScene) {
  const RobotModel m = RobotModel::desk_biped();
  const EpisodeDataset d = generate_episode(m, static_config());
  ASSERT_EQ(d.steps.size(), 200u);
  const Eigen::Vector3d g = NoiseParams{}.gravity;
  for (const DatasetStep& s : d.steps) {
    EXPECT_LT((s.a + s.R.transpose() * g).norm(), 1e-9);
    EXPECT_LT(s.w.norm(), 1e-12);
    EXPECT_LT(s.v.norm(), 1e-9);
    for (int i = 0; i < d.num_candidates; ++i) {
      EXPECT_TRUE(s.contact[i]);
      EXPECT_EQ(s.slip.col(i).norm(), 0.0);
    }
  }
}

TEST(Simulate, DeadReckoningReproducesTruth) {
  const RobotModel m = RobotModel::desk_biped();
  SimConfig c = SimConfig::noise_free("gait", 11);
  c.duration = 1.5;
  c.disturbance.period = 0.5;  // kicks exercise the IMU synthesis
  const EpisodeDataset d = generate_episode(m, c);
  const NoiseParams np;
  FilterState x = d.truth(0);
  for (int k = 1; k <= 200; ++k) x = propagate_mean(x, d.imu(k), np);
  const FilterState t = d.truth(200);
  EXPECT_LT((x.v - t.v).norm(), 1e-6);
  EXPECT_LT((x.p - t.p).norm(), 1e-6);
  EXPECT_LT(lie::so3_log(x.R.transpose() * t.R).norm(), 1e-9);
}

TEST(Simulate, ForcedSlipDriftsPinnedPoints) {
  const RobotModel m = RobotModel::desk_biped();
  SimConfig c = SimConfig::noise_free("gait", 5);
  c.duration = 2.0;
  c.randomize = false;
  c.gait.step_length = 0.02;
  c.gait.period = 0.4;
  c.gait.duty_cycle = 0.5;
  c.slip.probability = 1.0;
  c.slip.speed_min = c.slip.speed_max = 0.5;
  c.slip.direction = Eigen::Vector3d::UnitX();
  c.slip.max_duration = 1.0;
  c.friction_min = c.friction_max = 0.5;
  const EpisodeDataset d = generate_episode(m, c);
  const Eigen::Vector3d want(0.5, 0.0, 0.0);
  int slipping = 0;
  for (std::size_t k = 1; k < d.steps.size(); ++k) {
    for (int i = 0; i < d.num_candidates; ++i) {
      const bool now = d.steps[k].slip.col(i).norm() > 0.0;
      const bool before = d.steps[k - 1].slip.col(i).norm() > 0.0;
      if (!now || !before) continue;
      ++slipping;
      EXPECT_LT((d.steps[k].slip.col(i) - want).norm(), 1e-15);
      const Eigen::Vector3d rate =
          (d.steps[k].pc.col(i) - d.steps[k - 1].pc.col(i)) / d.dt();
      EXPECT_LT((rate - want).norm(), 1e-6) << "step " << k << " candidate " << i;
      // Faster than the labelling threshold, so not a contact.
      EXPECT_FALSE(d.steps[k].contact[i]);
    }
  }
  EXPECT_GT(slipping, 400);
}

void expect_kinematic_consistency(const RobotModel& m, const EpisodeDataset& d) {
  for (const DatasetStep& s : d.steps) {
    for (int i = 0; i < d.num_candidates; ++i) {
      const Eigen::Vector3d fk = forward_kinematics(m, s.q, i);
      ASSERT_LT((fk - s.R.transpose() * (s.pc.col(i) - s.p)).norm(), 1e-9);
    }
  }
}

TEST(Simulate, KinematicConsistencyGait) {
  const RobotModel m = RobotModel::desk_biped();
  SimConfig c = SimConfig::noise_free("gait", 21);
  c.slip.probability = 0.5;
  c.disturbance.period = 1.0;
  expect_kinematic_consistency(m, generate_episode(m, c));
}

TEST(Simulate, GroundPresetSitsOnRearCorners) {
  const RobotModel m = RobotModel::desk_biped_full_body();
  const EpisodeDataset d = generate_episode(m, SimConfig::noise_free("ground", 4));
  expect_kinematic_consistency(m, d);
  ASSERT_EQ(d.num_candidates, 10);
  // Feet stay planted; the rear corners touch down while sitting.
  int rear = 0;
  for (const DatasetStep& s : d.steps) {
    for (int i = 0; i < 4; ++i) EXPECT_TRUE(s.contact[i]);
    rear += s.contact[6] || s.contact[7];
    EXPECT_FALSE(s.contact[8] || s.contact[9]);
  }
  EXPECT_GT(rear, 500);
  for (int i = 0; i < 10; ++i) {
    for (const DatasetStep& s : d.steps) ASSERT_GT(s.pc(2, i), -1e-6);
  }
}

TEST(Simulate, Deterministic) {
  const RobotModel m = RobotModel::desk_biped();
  SimConfig c;
  c.seed = 77;
  c.duration = 2.0;
  const std::string a = generate_episode(m, c).to_jsonl();
  const std::string b = generate_episode(m, c).to_jsonl();
  EXPECT_EQ(a, b);
  c.seed = 78;
  EXPECT_NE(a, generate_episode(m, c).to_jsonl());
}

TEST(Simulate, NoiseStatistics) {
  const RobotModel m = RobotModel::desk_biped();
  SimConfig c = static_config();
  c.duration = 20.0;
  c.imu.gyro = 1e-2;
  c.encoder = 2e-3;
  const EpisodeDataset d = generate_episode(m, c);
  const EpisodeDataset clean = generate_episode(m, static_config());
  double w2 = 0.0, q2 = 0.0;
  int nw = 0, nq = 0;
  for (std::size_t k = 0; k < d.steps.size(); ++k) {
    w2 += d.steps[k].w.squaredNorm();
    nw += 3;
    const Eigen::VectorXd dq = d.steps[k].q - clean.steps[k % 200].q;
    q2 += dq.squaredNorm();
    nq += dq.size();
  }
  // Discrete white noise of a density sigma has variance sigma^2 / dt.
  EXPECT_NEAR(std::sqrt(w2 / nw), 1e-2 * std::sqrt(200.0), 0.03 * 1e-2 * std::sqrt(200.0));
  EXPECT_NEAR(std::sqrt(q2 / nq), 2e-3, 0.03 * 2e-3);
}

TEST(Simulate, UnreachableFootholdNamesStep) {
  const RobotModel m = RobotModel::desk_biped();
  SimConfig c = SimConfig::noise_free("gait", 1);
  c.randomize = false;
  c.gait.step_length = 0.5;
  try {
    generate_episode(m, c);
    FAIL() << "expected a generation error";
  } catch (const GenerationError& e) {
    EXPECT_GE(e.step(), -1);
    EXPECT_NE(std::string(e.what()).find("foothold"), std::string::npos);
  }
}

TEST(SimConfigJson, RoundTripAndValidation) {
  SimConfig c;
  c.scenario = "ground";
  c.slip.direction = Eigen::Vector3d(1, 2, 0);
  c.gait.duty_cycle = 0.55;
  c.seed = 1234567890123ULL;
  const SimConfig r = SimConfig::from_json(c.to_json());
  EXPECT_EQ(r.to_json(), c.to_json());
  nlohmann::json bad = c.to_json();
  bad["gait"]["duty_cycle"] = 1.0;
  EXPECT_THROW(SimConfig::from_json(bad), ConfigurationError);
  bad = c.to_json();
  bad["rate"] = 0.0;
  EXPECT_THROW(SimConfig::from_json(bad), ConfigurationError);
  bad = c.to_json();
  bad["slip"]["probability"] = 1.5;
  EXPECT_THROW(SimConfig::from_json(bad), ConfigurationError);
}

TEST(DatasetIo, RoundTripIsLossless) {
  const RobotModel m = RobotModel::desk_biped();
  SimConfig c;
  c.duration = 0.5;
  c.seed = 9;
  const EpisodeDataset d = generate_episode(m, c);
  const auto dir = std::filesystem::temp_directory_path() / "ccinekf_dataset_io";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "episode.jsonl").string();
  d.save(path, {{"sim", c.to_json()}});
  const EpisodeDataset r = EpisodeDataset::load(path);
  ASSERT_EQ(r.steps.size(), d.steps.size());
  EXPECT_EQ(r.rate, d.rate);
  for (std::size_t k = 0; k < d.steps.size(); ++k) {
    const DatasetStep& a = d.steps[k];
    const DatasetStep& b = r.steps[k];
    EXPECT_EQ(a.t, b.t);
    EXPECT_EQ(a.v, b.v);
    EXPECT_EQ(a.p, b.p);
    EXPECT_EQ(a.pc, b.pc);
    EXPECT_EQ(a.w, b.w);
    EXPECT_EQ(a.a, b.a);
    EXPECT_EQ(a.q, b.q);
    EXPECT_EQ(a.qd, b.qd);
    EXPECT_EQ(a.tau, b.tau);
    EXPECT_EQ(a.bg, b.bg);
    EXPECT_EQ(a.contact, b.contact);
    EXPECT_EQ(a.slip, b.slip);
    EXPECT_LT((a.R - b.R).norm(), 1e-15);
  }
  std::ifstream meta(dataset_metadata_path(path));
  const auto j = nlohmann::json::parse(meta);
  EXPECT_EQ(j.at("sim").at("seed").get<int>(), 9);
  std::filesystem::remove_all(dir);
}

TEST(DatasetIo, RejectsMalformedInput) {
  const nlohmann::json meta = {{"format", "ccinekf-dataset"}, {"rate", 200.0},
                               {"num_candidates", 1}, {"num_joints", 1}};
  EXPECT_THROW(EpisodeDataset::parse(meta, "{\"t\":0}\n"), InputError);
  EXPECT_THROW(EpisodeDataset::parse(meta, "not json\n"), InputError);
  EXPECT_THROW(EpisodeDataset::parse({{"format", "other"}}, ""), InputError);
  EXPECT_THROW(EpisodeDataset::load("/nonexistent/x.jsonl"), InputError);
}

TEST(DatasetIo, SeventeenDigits) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(format_double(M_PI)), M_PI);
}

// Noise-free, slip-free episode: the filter started at truth with tiny
// contact covariances on true contacts tracks the body velocity.
TEST(Simulate, GoldenIntegrationFixture) {
  const RobotModel m = RobotModel::desk_biped();
  SimConfig c = SimConfig::noise_free("gait", 31);
  const EpisodeDataset d = generate_episode(m, c);
  NoiseParams np;
  FilterEstimate e{d.truth(0), InitialCovariance{}.matrix(d.num_candidates)};
  double se = 0.0;
  for (std::size_t k = 1; k < d.steps.size(); ++k) {
    std::vector<Eigen::Matrix3d> sigma;
    for (int i = 0; i < d.num_candidates; ++i) {
      sigma.push_back((d.steps[k].contact[i] ? 1e-8 : 1e2) * Eigen::Matrix3d::Identity());
    }
    e = filter_step(e.x, e.P, d.imu(k), d.steps[k].q, sigma, m, np);
    const Eigen::Vector3d err =
        d.steps[k].R.transpose() * d.steps[k].v - e.x.R.transpose() * e.x.v;
    se += err.squaredNorm();
  }
  EXPECT_LT(std::sqrt(se / (d.steps.size() - 1)), 1e-4);
}

}  // namespace
}  // namespace ccinekf
