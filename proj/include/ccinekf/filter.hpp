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
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "ccinekf/liegroup.hpp"
#include "ccinekf/robot_model.hpp"

namespace ccinekf {

struct ImuSample {
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  double dt = 0.005;
};

// Continuous-time noise densities (per axis) and the encoder std.
struct NoiseParams {
  double gyro = 1.4142135623730951e-4;        // rad/s/sqrt(Hz)
  double accel = 1.4142135623730951e-3;       // m/s^2/sqrt(Hz)
  double gyro_bias = 1e-4;                    // rad/s/sqrt(s)
  double accel_bias = 1e-3;                   // m/s^2/sqrt(s)
  double encoder = 1e-3;                      // rad
  Eigen::Vector3d gravity{0.0, 0.0, -9.81};   // m/s^2

  void validate() const;
  nlohmann::json to_json() const;
  static NoiseParams from_json(const nlohmann::json& j);
};

// Diagonal of P0 per block (variances).
struct InitialCovariance {
  double rotation = 1e-4;
  double velocity = 1e-2;
  double position = 1e-4;
  double contact = 1e-2;
  double bias = 1e-4;

  Eigen::MatrixXd matrix(int num_candidates) const;
  nlohmann::json to_json() const;
  static InitialCovariance from_json(const nlohmann::json& j);
};

struct FilterEstimate {
  FilterState x;
  Eigen::MatrixXd P;
};

// Continuous error dynamics A (right-invariant group part, additive biases)
// evaluated at the pre-propagation estimate.
Eigen::MatrixXd error_dynamics(const FilterState& x, const NoiseParams& np);

// G Qc G^T: IMU, bias and contact noise mapped into the error state.
Eigen::MatrixXd process_noise(const FilterState& x,
                              std::span<const Eigen::Matrix3d> sigma_c,
                              const NoiseParams& np);

// Mean propagation only.
FilterState propagate_mean(const FilterState& x, const ImuSample& u,
                           const NoiseParams& np);

FilterEstimate predict(const FilterState& x, const Eigen::MatrixXd& P,
                       const ImuSample& u,
                       std::span<const Eigen::Matrix3d> sigma_c,
                       const NoiseParams& np);

// Stacked kinematic measurement for all candidates.
struct KinematicMeasurement {
  Eigen::VectorXd z;  // 3N innovation
  Eigen::MatrixXd H;  // 3N x dim
  Eigen::MatrixXd N;  // 3N x 3N
};
KinematicMeasurement kinematic_measurement(const FilterState& x,
                                           const Eigen::VectorXd& q,
                                           const RobotModel& model,
                                           const NoiseParams& np);

FilterEstimate correct(const FilterState& x, const Eigen::MatrixXd& P,
                       const Eigen::VectorXd& q, const RobotModel& model,
                       const NoiseParams& np);

FilterEstimate filter_step(const FilterState& x, const Eigen::MatrixXd& P,
                           const ImuSample& u, const Eigen::VectorXd& q,
                           std::span<const Eigen::Matrix3d> sigma_c,
                           const RobotModel& model, const NoiseParams& np);

// Throws InvalidCovarianceError unless every matrix is finite, symmetric and
// has min eigenvalue >= -1e-8.
void check_contact_covariances(std::span<const Eigen::Matrix3d> sigma_c);

// Process-wide record of every post-step covariance seen by the filters.
namespace covariance_health {

struct Stats {
  std::uint64_t checked = 0;
  std::uint64_t violations = 0;
  double worst_asymmetry = 0.0;
  std::string first_violation;
};

// Symmetric within 1e-9 and min eigenvalue >= -1e-8 (tested by a Cholesky
// factorization of P + 1e-8 I). Returns false on violation.
bool record(const Eigen::MatrixXd& P, const char* where);
Stats stats();
void reset();

}  // namespace covariance_health

}  // namespace ccinekf
