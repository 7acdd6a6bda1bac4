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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ccinekf/contact_net.hpp"
#include "ccinekf/filter.hpp"
#include "ccinekf/liegroup.hpp"
#include "ccinekf/robot_model.hpp"

namespace ccinekf {

struct GaitParams {
  double step_length = 0.06;  // m, half the stride
  double step_height = 0.03;  // m
  double duty_cycle = 0.6;
  double period = 0.8;        // s
  double sway = 0.01;         // m, lateral body sway
  double bob = 0.005;         // m, vertical body bob
  double roll = 0.03;         // rad
  double pitch = 0.02;        // rad
  double yaw = 0.05;          // rad, yaw wiggle about the path heading
  double turn_rate = 0.0;     // rad/s, path curvature times speed
};

struct SlipParams {
  double probability = 0.3;  // per stance, at the lowest friction
  double speed_min = 0.05;   // m/s
  double speed_max = 0.5;    // m/s
  // Zero means a uniformly random horizontal direction.
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
  double max_duration = 0.2;  // s
};

struct DisturbanceParams {
  double max_kick = 0.3;  // m/s peak velocity change
  double period = 2.0;    // s, zero disables
};

struct ImuNoise {
  double gyro = 1.414e-4;       // rad/s/sqrt(Hz)
  double accel = 1.414e-3;      // m/s^2/sqrt(Hz)
  double gyro_bias = 1e-4;      // rad/s^2/sqrt(Hz) random walk
  double accel_bias = 1e-3;     // m/s^3/sqrt(Hz) random walk
  double gyro_bias_init = 0.005;   // rad/s, uniform half-range
  double accel_bias_init = 0.005;  // m/s^2, uniform half-range
};

struct SimConfig {
  std::string scenario = "gait";  // "gait" or "ground"
  double duration = 10.0;         // s
  double rate = 200.0;            // Hz
  GaitParams gait;
  SlipParams slip;
  double friction_min = 0.3;
  double friction_max = 1.0;
  DisturbanceParams disturbance;
  ImuNoise imu;
  double encoder = 1e-3;  // rad
  // Draw per-episode gait speed, heading, turn rate and amplitudes.
  bool randomize = true;
  std::uint64_t seed = 0;

  // No noise, no slip, no kicks.
  static SimConfig noise_free(std::string scenario, std::uint64_t seed);

  void validate() const;
  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& j);
};

struct DatasetStep {
  double t = 0.0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Matrix3Xd pc;
  Eigen::Vector3d bg = Eigen::Vector3d::Zero();
  Eigen::Vector3d ba = Eigen::Vector3d::Zero();
  // IMU sample covering (t - dt, t].
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  Eigen::VectorXd q, qd, tau;
  std::vector<bool> contact;
  Eigen::Matrix3Xd slip;  // world-frame slip velocity per candidate
};

struct EpisodeDataset {
  std::string model_name;
  std::string scenario;
  double rate = 200.0;
  int num_candidates = 0;
  int num_joints = 0;
  std::vector<DatasetStep> steps;

  double dt() const { return 1.0 / rate; }
  FilterState truth(int k) const;
  ImuSample imu(int k) const;
  SensorFrame frame(const RobotModel& model, int k) const;

  // JSONL records, one per step, plus a metadata JSON.
  nlohmann::json metadata() const;
  std::string to_jsonl() const;
  void save(const std::string& jsonl_path, const nlohmann::json& extra = {}) const;
  static EpisodeDataset load(const std::string& jsonl_path);
  static EpisodeDataset parse(const nlohmann::json& metadata, const std::string& jsonl);
};

// Path of the metadata file written next to a dataset.
std::string dataset_metadata_path(const std::string& jsonl_path);

// Contact label from kinematics: xy-speed <= 0.25 m/s and height <= 0.01 m.
bool ground_truth_contact(double xy_speed, double height);

EpisodeDataset generate_episode(const RobotModel& model, const SimConfig& cfg);

// Decimal text with 17 significant digits.
std::string format_double(double x);

// Writes through a temporary file and a rename.
void write_file_atomically(const std::string& path, const std::string& text);
std::string read_file(const std::string& path);

}  // namespace ccinekf
