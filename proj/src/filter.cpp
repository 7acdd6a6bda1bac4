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

#include "ccinekf/filter.hpp"

#include <atomic>
#include <cmath>
#include <mutex>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ccinekf/errors.hpp"

namespace ccinekf {

using lie::skew;
using nlohmann::json;

void NoiseParams::validate() const {
  if (!(gyro > 0 && accel > 0 && gyro_bias > 0 && accel_bias > 0 &&
        encoder > 0)) {
    throw ConfigurationError("noise parameters must be positive");
  }
  if (!gravity.allFinite()) throw ConfigurationError("gravity must be finite");
}

json NoiseParams::to_json() const {
  return {{"gyro", gyro},
          {"accel", accel},
          {"gyro_bias", gyro_bias},
          {"accel_bias", accel_bias},
          {"encoder", encoder},
          {"gravity", {gravity.x(), gravity.y(), gravity.z()}}};
}

NoiseParams NoiseParams::from_json(const json& j) {
  NoiseParams np;
  np.gyro = j.value("gyro", np.gyro);
  np.accel = j.value("accel", np.accel);
  np.gyro_bias = j.value("gyro_bias", np.gyro_bias);
  np.accel_bias = j.value("accel_bias", np.accel_bias);
  np.encoder = j.value("encoder", np.encoder);
  if (j.contains("gravity")) {
    const auto& g = j["gravity"];
    np.gravity = Eigen::Vector3d(g.at(0), g.at(1), g.at(2));
  }
  np.validate();
  return np;
}

Eigen::MatrixXd InitialCovariance::matrix(int num_candidates) const {
  const TangentLayout L{num_candidates};
  Eigen::VectorXd d(L.dim());
  d.segment<3>(TangentLayout::kRot).setConstant(rotation);
  d.segment<3>(TangentLayout::kVel).setConstant(velocity);
  d.segment<3>(TangentLayout::kPos).setConstant(position);
  for (int i = 0; i < num_candidates; ++i) {
    d.segment<3>(L.contact(i)).setConstant(contact);
  }
  d.tail<6>().setConstant(bias);
  return d.asDiagonal();
}

json InitialCovariance::to_json() const {
  return {{"rotation", rotation}, {"velocity", velocity}, {"position", position},
          {"contact", contact},   {"bias", bias}};
}

InitialCovariance InitialCovariance::from_json(const json& j) {
  InitialCovariance c;
  c.rotation = j.value("rotation", c.rotation);
  c.velocity = j.value("velocity", c.velocity);
  c.position = j.value("position", c.position);
  c.contact = j.value("contact", c.contact);
  c.bias = j.value("bias", c.bias);
  if (!(c.rotation > 0 && c.velocity > 0 && c.position > 0 && c.contact > 0 &&
        c.bias > 0)) {
    throw ConfigurationError("initial covariance entries must be positive");
  }
  return c;
}

Eigen::MatrixXd error_dynamics(const FilterState& x, const NoiseParams& np) {
  const TangentLayout L = x.layout();
  const int bg = L.gyro_bias();
  const int ba = L.accel_bias();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(L.dim(), L.dim());
  A.block<3, 3>(TangentLayout::kVel, TangentLayout::kRot) = skew(np.gravity);
  A.block<3, 3>(TangentLayout::kPos, TangentLayout::kVel).setIdentity();
  A.block<3, 3>(TangentLayout::kRot, bg) = -x.R;
  A.block<3, 3>(TangentLayout::kVel, bg) = -skew(x.v) * x.R;
  A.block<3, 3>(TangentLayout::kVel, ba) = -x.R;
  A.block<3, 3>(TangentLayout::kPos, bg) = -skew(x.p) * x.R;
  for (int i = 0; i < x.num_candidates(); ++i) {
    A.block<3, 3>(L.contact(i), bg) = -skew(x.pc.col(i)) * x.R;
  }
  return A;
}

Eigen::MatrixXd process_noise(const FilterState& x,
                              std::span<const Eigen::Matrix3d> sigma_c,
                              const NoiseParams& np) {
  const TangentLayout L = x.layout();
  const int n = x.num_candidates();
  if (static_cast<int>(sigma_c.size()) != n) {
    throw InputError("expected one contact covariance per candidate");
  }
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(L.dim(), L.dim());
  // Gyro noise enters every group block through the adjoint.
  Eigen::MatrixXd Gw(L.group_dim(), 3);
  Gw.block<3, 3>(TangentLayout::kRot, 0) = x.R;
  Gw.block<3, 3>(TangentLayout::kVel, 0) = skew(x.v) * x.R;
  Gw.block<3, 3>(TangentLayout::kPos, 0) = skew(x.p) * x.R;
  for (int i = 0; i < n; ++i) {
    Gw.block<3, 3>(L.contact(i), 0) = skew(x.pc.col(i)) * x.R;
  }
  Q.topLeftCorner(L.group_dim(), L.group_dim()) =
      (np.gyro * np.gyro) * Gw * Gw.transpose();
  Q.block<3, 3>(TangentLayout::kVel, TangentLayout::kVel) +=
      (np.accel * np.accel) * Eigen::Matrix3d::Identity();
  for (int i = 0; i < n; ++i) {
    Q.block<3, 3>(L.contact(i), L.contact(i)) +=
        x.R * sigma_c[i] * x.R.transpose();
  }
  Q.block<3, 3>(L.gyro_bias(), L.gyro_bias()) =
      (np.gyro_bias * np.gyro_bias) * Eigen::Matrix3d::Identity();
  Q.block<3, 3>(L.accel_bias(), L.accel_bias()) =
      (np.accel_bias * np.accel_bias) * Eigen::Matrix3d::Identity();
  return Q;
}

FilterState propagate_mean(const FilterState& x, const ImuSample& u,
                           const NoiseParams& np) {
  FilterState y = x;
  const Eigen::Vector3d acc = x.R * (u.a - x.ba) + np.gravity;
  y.R = x.R * lie::so3_exp((u.w - x.bg) * u.dt);
  y.v = x.v + acc * u.dt;
  y.p = x.p + x.v * u.dt + 0.5 * acc * u.dt * u.dt;
  return y;
}

void check_contact_covariances(std::span<const Eigen::Matrix3d> sigma_c) {
  for (std::size_t i = 0; i < sigma_c.size(); ++i) {
    const Eigen::Matrix3d& S = sigma_c[i];
    if (!S.allFinite() ||
        (S - S.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + S.norm())) {
      throw InvalidCovarianceError("contact covariance " +
                                   std::to_string(i + 1) +
                                   " is not a finite symmetric matrix");
    }
    const double min_eig =
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(S, Eigen::EigenvaluesOnly)
            .eigenvalues()
            .minCoeff();
    if (min_eig < -1e-8) {
      throw InvalidCovarianceError("contact covariance " +
                                   std::to_string(i + 1) +
                                   " is not positive semidefinite");
    }
  }
}

FilterEstimate predict(const FilterState& x, const Eigen::MatrixXd& P,
                       const ImuSample& u,
                       std::span<const Eigen::Matrix3d> sigma_c,
                       const NoiseParams& np) {
  if (!(u.dt > 0.0)) throw InputError("IMU sample dt must be positive");
  check_contact_covariances(sigma_c);
  const int dim = x.layout().dim();
  const Eigen::MatrixXd Adt = error_dynamics(x, np) * u.dt;
  const Eigen::MatrixXd Phi =
      Eigen::MatrixXd::Identity(dim, dim) + Adt + 0.5 * Adt * Adt;
  // Phi P Phi^T + Phi (G Qc G^T dt) Phi^T in one product.
  const Eigen::MatrixXd M = P + process_noise(x, sigma_c, np) * u.dt;
  FilterEstimate out;
  out.x = propagate_mean(x, u, np);
  out.P = Phi * M * Phi.transpose();
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  covariance_health::record(out.P, "predict");
  return out;
}

KinematicMeasurement kinematic_measurement(const FilterState& x,
                                           const Eigen::VectorXd& q,
                                           const RobotModel& model,
                                           const NoiseParams& np) {
  const int n = x.num_candidates();
  if (model.num_candidates() != n) {
    throw InputError("state and model disagree on the candidate count");
  }
  const TangentLayout L = x.layout();
  KinematicMeasurement m;
  m.z.resize(3 * n);
  m.H = Eigen::MatrixXd::Zero(3 * n, L.dim());
  Eigen::MatrixXd RJ(3 * n, model.num_joints());
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d h = forward_kinematics(model, q, i);
    m.z.segment<3>(3 * i) = x.R * h - (x.pc.col(i) - x.p);
    m.H.block<3, 3>(3 * i, TangentLayout::kPos) = -Eigen::Matrix3d::Identity();
    m.H.block<3, 3>(3 * i, L.contact(i)).setIdentity();
    RJ.middleRows<3>(3 * i) = x.R * point_jacobian(model, q, i);
  }
  // Candidates on a shared chain get correlated encoder noise.
  m.N = (np.encoder * np.encoder) * RJ * RJ.transpose();
  return m;
}

FilterEstimate correct(const FilterState& x, const Eigen::MatrixXd& P,
                       const Eigen::VectorXd& q, const RobotModel& model,
                       const NoiseParams& np) {
  const KinematicMeasurement m = kinematic_measurement(x, q, model, np);
  const int dim = x.layout().dim();
  const Eigen::MatrixXd HP = m.H * P;
  Eigen::MatrixXd S = HP * m.H.transpose() + m.N;
  S = 0.5 * (S + S.transpose()).eval();
  S.diagonal().array() += 1e-12;
  const Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success || !S.allFinite()) {
    throw SingularUpdateError("innovation covariance is not positive definite");
  }
  const Eigen::MatrixXd K = llt.solve(HP).transpose();  // dim x k
  FilterEstimate out;
  out.x = lie::state_retract(x, K * m.z);
  const Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(dim, dim) - K * m.H;
  out.P = IKH * P * IKH.transpose() + K * m.N * K.transpose();
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  covariance_health::record(out.P, "correct");
  return out;
}

FilterEstimate filter_step(const FilterState& x, const Eigen::MatrixXd& P,
                           const ImuSample& u, const Eigen::VectorXd& q,
                           std::span<const Eigen::Matrix3d> sigma_c,
                           const RobotModel& model, const NoiseParams& np) {
  const FilterEstimate pred = predict(x, P, u, sigma_c, np);
  return correct(pred.x, pred.P, q, model, np);
}

namespace covariance_health {
namespace {

std::mutex g_mutex;
Stats g_stats;

}  // namespace

bool record(const Eigen::MatrixXd& P, const char* where) {
  const double asym = (P - P.transpose()).cwiseAbs().maxCoeff();
  Eigen::MatrixXd shifted = P;
  shifted.diagonal().array() += 1e-8;
  const bool ok = P.allFinite() && asym <= 1e-9 &&
                  Eigen::LLT<Eigen::MatrixXd>(shifted).info() == Eigen::Success;
  std::lock_guard<std::mutex> lock(g_mutex);
  ++g_stats.checked;
  g_stats.worst_asymmetry = std::max(g_stats.worst_asymmetry, asym);
  if (!ok) {
    if (g_stats.violations == 0) g_stats.first_violation = where;
    ++g_stats.violations;
  }
  return ok;
}

Stats stats() {
  std::lock_guard<std::mutex> lock(g_mutex);
  return g_stats;
}

void reset() {
  std::lock_guard<std::mutex> lock(g_mutex);
  g_stats = Stats{};
}

}  // namespace covariance_health
}  // namespace ccinekf
