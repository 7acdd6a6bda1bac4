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

#include <span>
#include <vector>

#include <Eigen/Core>

#include "ccinekf/contact_net.hpp"
#include "ccinekf/filter.hpp"
#include "ccinekf/robot_model.hpp"
#include "ccinekf/tape.hpp"

namespace ccinekf {

// Everything one filter step of a training buffer consumes.
struct BufferStep {
  ImuSample imu;
  Eigen::VectorXd q;
  Eigen::MatrixXd features;  // input_dim x N, normalized history window
  Eigen::Matrix3d R_gt = Eigen::Matrix3d::Identity();
  Eigen::Vector3d v_gt = Eigen::Vector3d::Zero();
};

struct RolloutOptions {
  // Multiplies every predicted contact covariance.
  double sigma_scale = 1.0;
  // Multiplies the loss (and therefore every gradient).
  double loss_scale = 1.0;
};

struct TapedNet {
  std::vector<ad::NodeId> weights;
  std::vector<ad::NodeId> biases;
};

TapedNet record_params(ad::Tape& tape, const ContactNet& net);
// Outputs for every feature column, 6 x M.
ad::NodeId taped_mlp(ad::Tape& tape, const ContactNet& net, const TapedNet& params,
                     ad::NodeId features);
// 6 x M raw outputs -> 3 x 3M stacked covariances L L^T + 1e-8 I.
ad::NodeId taped_contact_covariances(ad::Tape& tape, ad::NodeId outputs);

struct TapedState {
  ad::NodeId R, v, p, pc, bg, ba, P;
};

TapedState taped_constant_state(ad::Tape& tape, const FilterEstimate& est);
FilterEstimate taped_values(const ad::Tape& tape, const TapedState& s);

// Phi = I + A dt + A^2 dt^2 / 2.
ad::NodeId taped_transition(ad::Tape& tape, const TapedState& s,
                            const NoiseParams& np, double dt);
// G Qc G^T with the stacked 3 x 3N contact covariance node.
ad::NodeId taped_process_noise(ad::Tape& tape, const TapedState& s,
                               ad::NodeId sigma, const NoiseParams& np);
TapedState taped_predict(ad::Tape& tape, const TapedState& s, const ImuSample& u,
                         ad::NodeId sigma, const NoiseParams& np);
TapedState taped_correct(ad::Tape& tape, const TapedState& s,
                         const Eigen::VectorXd& q, const RobotModel& model,
                         const NoiseParams& np);

struct Rollout {
  ad::Tape tape;
  ad::NodeId loss = -1;
  double loss_value = 0.0;
  TapedNet params;
  // Estimate after the last step, detached from the tape.
  FilterEstimate final;
  std::vector<double> step_losses;
};

// Mean over the buffer of |R_gt^T v_gt - R^T v|^2 (times loss_scale).
Rollout rollout_loss(const ContactNet& net, const FilterEstimate& initial,
                     std::span<const BufferStep> steps, const RobotModel& model,
                     const NoiseParams& np, const RolloutOptions& options = {});

struct GradientSet {
  std::vector<DenseLayer> layers;

  static GradientSet zeros_like(const ContactNet& net);
  Eigen::VectorXd flatten() const;
  double norm() const;
  void add(const GradientSet& other);
  void scale(double s);
  bool all_finite() const;
};

GradientSet backward(Rollout& rollout);

// Same computation without a tape, through predict/correct.
double replay_loss(const ContactNet& net, const FilterEstimate& initial,
                   std::span<const BufferStep> steps, const RobotModel& model,
                   const NoiseParams& np, const RolloutOptions& options = {},
                   FilterEstimate* final = nullptr);

}  // namespace ccinekf
