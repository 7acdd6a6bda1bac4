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

#include <Eigen/Core>

namespace ccinekf {

// Sine-like coefficients use their Taylor expansion below this angle.
inline constexpr double kSmallAngle = 1e-8;

// Row/column layout of the error state shared by P, Phi, H and every
// tangent vector: (dtheta, dv, dp, dp_C1..dp_CN, db_gyro, db_accel).
struct TangentLayout {
  int num_candidates = 0;

  static constexpr int kRot = 0;
  static constexpr int kVel = 3;
  static constexpr int kPos = 6;

  constexpr int contact(int i) const { return 9 + 3 * i; }
  constexpr int gyro_bias() const { return 9 + 3 * num_candidates; }
  constexpr int accel_bias() const { return 12 + 3 * num_candidates; }
  constexpr int group_dim() const { return 9 + 3 * num_candidates; }
  constexpr int dim() const { return 15 + 3 * num_candidates; }
};

// Estimated tuple (R, v, p, p_C1..p_CN, b_gyro, b_accel); world-frame
// quantities except the body-frame IMU biases. Contact positions are the
// columns of `pc`.
struct FilterState {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Matrix3Xd pc;
  Eigen::Vector3d bg = Eigen::Vector3d::Zero();
  Eigen::Vector3d ba = Eigen::Vector3d::Zero();

  static FilterState Zero(int num_candidates) {
    FilterState x;
    x.pc = Eigen::Matrix3Xd::Zero(3, num_candidates);
    return x;
  }

  int num_candidates() const { return static_cast<int>(pc.cols()); }
  TangentLayout layout() const { return TangentLayout{num_candidates()}; }
  bool all_finite() const;
};

namespace lie {

Eigen::Matrix3d skew(const Eigen::Vector3d& w);
Eigen::Vector3d vee(const Eigen::Matrix3d& S);

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w);
Eigen::Vector3d so3_log(const Eigen::Matrix3d& R);

// J_l(w) = sum_k [w]x^k / (k+1)!; J_r(w) = J_l(-w).
Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& w);
Eigen::Matrix3d so3_left_jacobian_inv(const Eigen::Vector3d& w);
Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& w);

// Coefficients of exp(w) = I + a [w]x + b [w]x^2 and
// J_l(w) = I + b [w]x + c [w]x^2 with theta = |w|.
struct So3Coefficients {
  double a;
  double b;
  double c;
  // (db/dtheta)/theta and (dc/dtheta)/theta, used by the J_l derivative.
  double db_over_theta;
  double dc_over_theta;
};
So3Coefficients so3_coefficients(double theta);

bool is_rotation(const Eigen::Matrix3d& R, double tol = 1e-9);

Eigen::Matrix3d rot_x(double angle);
Eigen::Matrix3d rot_y(double angle);
Eigen::Matrix3d rot_z(double angle);
double yaw_of(const Eigen::Matrix3d& R);

// Right-invariant retraction: the group part becomes exp(delta) * X with the
// velocity, position and contact columns of exp(delta) built from
// J_l(dtheta); biases are updated additively.
FilterState state_retract(const FilterState& x, const Eigen::VectorXd& delta);

// Group-part tangent vector xi with X_true = exp(xi) * X_est (length 9+3N).
Eigen::VectorXd right_invariant_error(const FilterState& estimate,
                                      const FilterState& truth);

// Adjoint of the group element of x, size (9+3N) x (9+3N).
Eigen::MatrixXd group_adjoint(const FilterState& x);

}  // namespace lie
}  // namespace ccinekf
