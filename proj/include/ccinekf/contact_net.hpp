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
#include <deque>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "ccinekf/robot_model.hpp"

namespace ccinekf {

inline constexpr int kFeatureLayoutVersion = 1;

// One timestep of proprioception. Candidate positions/velocities are relative
// to the base and expressed in the body frame, computed from the measured
// joint state.
struct SensorFrame {
  double t = 0.0;
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  Eigen::VectorXd q;
  Eigen::VectorXd qd;
  Eigen::VectorXd tau;
  Eigen::Matrix3Xd cand_p;
  Eigen::Matrix3Xd cand_v;

  // Fills cand_p = h(q) and cand_v = J(q) qd for every candidate.
  static SensorFrame make(const RobotModel& model, double t,
                          const Eigen::Vector3d& w, const Eigen::Vector3d& a,
                          const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                          const Eigen::VectorXd& tau);
};

// Per-candidate channel selection. Channels, in order: w (3), a (3), then
// q, qd, tau of the candidate's chain joints, each zero padded to
// chain_width, then candidate position (3) and velocity (3).
struct FeatureLayout {
  int history = 20;
  int chain_width = 0;
  std::vector<std::vector<int>> chain_joints;

  static FeatureLayout from_model(const RobotModel& model, int history);
  int num_candidates() const { return static_cast<int>(chain_joints.size()); }
  int channels() const { return 12 + 3 * chain_width; }
  int input_dim() const { return channels() * history; }
};

// Oldest-first window of H frames; before warm-up the first frame is
// repeated at the front.
class HistoryWindow {
 public:
  explicit HistoryWindow(int history) : history_(history) {}

  void push(const SensorFrame& frame);
  void clear() { frames_.clear(); }
  bool warm() const { return static_cast<int>(frames_.size()) == history_; }
  int history() const { return history_; }
  // Frame k of the padded window, k in [0, H).
  const SensorFrame& at(int k) const;

 private:
  int history_;
  std::deque<SensorFrame> frames_;
};

// Per-row normalization over time: (x - mean) / (std + 1e-6), population std.
Eigen::MatrixXd normalize_channels(const Eigen::MatrixXd& x);

// Raw per-candidate channel matrix, channels x H.
Eigen::MatrixXd candidate_channels(const FeatureLayout& layout,
                                   const HistoryWindow& window, int candidate);

// Normalized, channel-major flattened features, input_dim x N.
Eigen::MatrixXd history_features(const FeatureLayout& layout,
                                 const HistoryWindow& window);

struct ContactNetArch {
  int input_dim = 0;
  std::vector<int> hidden{128, 64};
  int history = 20;
  int num_candidates = 4;
  int chain_width = 6;
  std::string activation = "relu";
  int layout_version = kFeatureLayoutVersion;

  static ContactNetArch for_layout(const FeatureLayout& layout,
                                   std::vector<int> hidden = {128, 64});
};

struct DenseLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

class ContactNet {
 public:
  ContactNet() = default;
  // He-uniform weights, zero biases.
  static ContactNet initialize(const ContactNetArch& arch, std::uint64_t seed);
  static ContactNet zeros(const ContactNetArch& arch);

  const ContactNetArch& arch() const { return arch_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  int num_params() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& theta);

  // Raw 6-vector outputs for each feature column, 6 x N.
  Eigen::MatrixXd outputs(const Eigen::MatrixXd& features) const;
  std::vector<Eigen::Matrix3d> factors(const Eigen::MatrixXd& features) const;

  nlohmann::json to_json() const;
  static ContactNet from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static ContactNet load(const std::string& path);

 private:
  ContactNetArch arch_;
  std::vector<DenseLayer> layers_;
};

// W X + b evaluated one column at a time, so a column's result does not
// depend on the rest of the batch.
Eigen::MatrixXd dense_affine(const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                             const Eigen::MatrixXd& X);

double softplus(double x);
double sigmoid(double x);

// Lower-triangular factor from (L00, L10, L11, L20, L21, L22) with softplus on
// the diagonal entries.
Eigen::Matrix3d factor_from_outputs(const Eigen::Matrix<double, 6, 1>& o);

// L L^T + 1e-8 I.
Eigen::Matrix3d chol_to_cov(const Eigen::Matrix3d& L);

// Per-candidate factors for the current window.
std::vector<Eigen::Matrix3d> forward(const ContactNet& net,
                                     const FeatureLayout& layout,
                                     const HistoryWindow& window);

std::vector<Eigen::Matrix3d> contact_covariances(const ContactNet& net,
                                                 const FeatureLayout& layout,
                                                 const HistoryWindow& window);

}  // namespace ccinekf
