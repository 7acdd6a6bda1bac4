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

#include "ccinekf/liegroup.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace ccinekf {

bool FilterState::all_finite() const {
  return R.allFinite() && v.allFinite() && p.allFinite() && pc.allFinite() &&
         bg.allFinite() && ba.allFinite();
}

namespace lie {

namespace {

// Below this angle the coefficients that lose digits to cancellation
// (c, d and the derivative terms) switch to a six-term series.
constexpr double kSeriesAngle = 0.1;

}  // namespace

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d S;
  S << 0.0, -w.z(), w.y(),  //
      w.z(), 0.0, -w.x(),   //
      -w.y(), w.x(), 0.0;
  return S;
}

Eigen::Vector3d vee(const Eigen::Matrix3d& S) {
  return Eigen::Vector3d(S(2, 1), S(0, 2), S(1, 0));
}

So3Coefficients so3_coefficients(double theta) {
  So3Coefficients k{};
  const double t2 = theta * theta;
  if (theta < kSmallAngle) {
    k.a = 1.0 - t2 / 6.0;
    k.b = 0.5 - t2 / 24.0;
  } else {
    k.a = std::sin(theta) / theta;
    const double h = std::sin(0.5 * theta);
    k.b = 2.0 * h * h / t2;
  }
  if (theta < kSeriesAngle) {
    const double t4 = t2 * t2;
    const double t6 = t4 * t2;
    const double t8 = t4 * t4;
    const double t10 = t8 * t2;
    k.c = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0 +
          t8 / 39916800.0 - t10 / 6227020800.0;
    k.db_over_theta = -2.0 / 24.0 + 4.0 * t2 / 720.0 - 6.0 * t4 / 40320.0 +
                      8.0 * t6 / 3628800.0 - 10.0 * t8 / 479001600.0;
    k.dc_over_theta = -2.0 / 120.0 + 4.0 * t2 / 5040.0 - 6.0 * t4 / 362880.0 +
                      8.0 * t6 / 39916800.0 - 10.0 * t8 / 6227020800.0;
  } else {
    k.c = (theta - std::sin(theta)) / (t2 * theta);
    k.db_over_theta = (k.a - 2.0 * k.b) / t2;
    k.dc_over_theta = (k.b - 3.0 * k.c) / t2;
  }
  return k;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
  const So3Coefficients k = so3_coefficients(w.norm());
  const Eigen::Matrix3d W = skew(w);
  return Eigen::Matrix3d::Identity() + k.a * W + k.b * W * W;
}

Eigen::Vector3d so3_log(const Eigen::Matrix3d& R) {
  const double cos_angle = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const Eigen::Vector3d sin_axis = 0.5 * vee(R - R.transpose());
  const double sin_angle = sin_axis.norm();
  const double angle = std::atan2(sin_angle, cos_angle);
  if (angle < kSmallAngle) {
    return (1.0 + angle * angle / 6.0) * sin_axis;
  }
  if (cos_angle > -0.99) {
    return (angle / sin_angle) * sin_axis;
  }
  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part, (R + R^T)/2 - cos I = (1 - cos) a a^T.
  const Eigen::Matrix3d B =
      0.5 * (R + R.transpose()) - cos_angle * Eigen::Matrix3d::Identity();
  int k = 0;
  B.diagonal().maxCoeff(&k);
  Eigen::Vector3d axis = B.col(k) / std::sqrt(B(k, k));
  axis.normalize();
  if (axis.dot(sin_axis) < 0.0) axis = -axis;
  return angle * axis;
}

Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& w) {
  const So3Coefficients k = so3_coefficients(w.norm());
  const Eigen::Matrix3d W = skew(w);
  return Eigen::Matrix3d::Identity() + k.b * W + k.c * W * W;
}

Eigen::Matrix3d so3_left_jacobian_inv(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const double t2 = theta * theta;
  double d;
  if (theta < kSeriesAngle) {
    const double t4 = t2 * t2;
    d = 1.0 / 12.0 + t2 / 720.0 + t4 / 30240.0 + t4 * t2 / 1209600.0;
  } else {
    d = 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  const Eigen::Matrix3d W = skew(w);
  return Eigen::Matrix3d::Identity() - 0.5 * W + d * W * W;
}

Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& w) {
  return so3_left_jacobian(-w);
}

bool is_rotation(const Eigen::Matrix3d& R, double tol) {
  if (!R.allFinite()) return false;
  const double ortho = (R * R.transpose() - Eigen::Matrix3d::Identity())
                           .cwiseAbs()
                           .maxCoeff();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Eigen::Matrix3d rot_x(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::Matrix3d R;
  R << 1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c;
  return R;
}

Eigen::Matrix3d rot_y(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::Matrix3d R;
  R << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  return R;
}

Eigen::Matrix3d rot_z(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::Matrix3d R;
  R << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return R;
}

double yaw_of(const Eigen::Matrix3d& R) { return std::atan2(R(1, 0), R(0, 0)); }

FilterState state_retract(const FilterState& x, const Eigen::VectorXd& delta) {
  const TangentLayout layout = x.layout();
  const Eigen::Vector3d dtheta = delta.segment<3>(TangentLayout::kRot);
  const Eigen::Matrix3d E = so3_exp(dtheta);
  const Eigen::Matrix3d J = so3_left_jacobian(dtheta);

  FilterState out;
  out.R = E * x.R;
  out.v = E * x.v + J * delta.segment<3>(TangentLayout::kVel);
  out.p = E * x.p + J * delta.segment<3>(TangentLayout::kPos);
  out.pc.resize(3, x.num_candidates());
  for (int i = 0; i < x.num_candidates(); ++i) {
    out.pc.col(i) =
        E * x.pc.col(i) + J * delta.segment<3>(layout.contact(i));
  }
  out.bg = x.bg + delta.segment<3>(layout.gyro_bias());
  out.ba = x.ba + delta.segment<3>(layout.accel_bias());
  return out;
}

Eigen::VectorXd right_invariant_error(const FilterState& estimate,
                                      const FilterState& truth) {
  const TangentLayout layout = estimate.layout();
  const Eigen::Matrix3d dR = truth.R * estimate.R.transpose();
  const Eigen::Vector3d dtheta = so3_log(dR);
  const Eigen::Matrix3d Jinv = so3_left_jacobian_inv(dtheta);

  Eigen::VectorXd xi(layout.group_dim());
  xi.segment<3>(TangentLayout::kRot) = dtheta;
  xi.segment<3>(TangentLayout::kVel) = Jinv * (truth.v - dR * estimate.v);
  xi.segment<3>(TangentLayout::kPos) = Jinv * (truth.p - dR * estimate.p);
  for (int i = 0; i < estimate.num_candidates(); ++i) {
    xi.segment<3>(layout.contact(i)) =
        Jinv * (truth.pc.col(i) - dR * estimate.pc.col(i));
  }
  return xi;
}

Eigen::MatrixXd group_adjoint(const FilterState& x) {
  const TangentLayout layout = x.layout();
  const int n = layout.group_dim();
  Eigen::MatrixXd Ad = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; k += 3) Ad.block<3, 3>(k, k) = x.R;
  Ad.block<3, 3>(TangentLayout::kVel, 0) = skew(x.v) * x.R;
  Ad.block<3, 3>(TangentLayout::kPos, 0) = skew(x.p) * x.R;
  for (int i = 0; i < x.num_candidates(); ++i) {
    Ad.block<3, 3>(layout.contact(i), 0) = skew(x.pc.col(i)) * x.R;
  }
  return Ad;
}

}  // namespace lie
}  // namespace ccinekf
