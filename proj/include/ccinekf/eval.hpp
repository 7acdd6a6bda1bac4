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

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ccinekf/contact_net.hpp"
#include "ccinekf/filter.hpp"
#include "ccinekf/robot_model.hpp"
#include "ccinekf/sim.hpp"

namespace ccinekf {

using Matrix9d = Eigen::Matrix<double, 9, 9>;
using Vector9d = Eigen::Matrix<double, 9, 1>;

// Time-aligned estimate and ground truth. P_core holds the (rotation,
// velocity, position) block of the filter covariance when recorded, and
// sigma_trace the per-candidate sqrt(trace) of the contact covariance used.
struct TrajectoryPair {
  std::vector<double> t;
  std::vector<Eigen::Matrix3d> R_est, R_gt;
  std::vector<Eigen::Vector3d> v_est, v_gt, p_est, p_gt;
  std::vector<Matrix9d> P_core;
  std::vector<Eigen::VectorXd> sigma_trace;

  std::size_t size() const { return t.size(); }
  void validate() const;
};

struct ErrorStats {
  double rmse = 0.0;
  double mae = 0.0;
  double med = 0.0;
  double std = 0.0;
  nlohmann::json to_json(const std::string& units) const;
  static ErrorStats from_json(const nlohmann::json& j);
};

// RMSE, MAE, median and population standard deviation of error norms.
ErrorStats error_stats(std::span<const double> errors);

struct AteErrors {
  std::vector<double> velocity;     // |R^T v - R_hat^T v_hat|, m/s
  std::vector<double> position;     // m, after alignment
  std::vector<double> orientation;  // rad, after alignment
};

struct AteReport {
  ErrorStats velocity, position, orientation;
  std::size_t steps = 0;
  nlohmann::json to_json() const;
  static AteReport from_json(const nlohmann::json& j);
};

// Ground truth composed with the yaw + translation transform that matches
// the estimate at t = 0.
AteErrors ate_errors(const TrajectoryPair& pair);
AteReport ate(const TrajectoryPair& pair);

// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);
double chi2_cdf(double x, int dof);
// Inverse CDF by bisection on chi2_cdf.
double chi2_quantile(double p, int dof);
// Two-sided bounds at the given confidence.
std::pair<double, double> chi2_bounds(int dof, double confidence = 0.95);

enum class NeesBlock { kCore, kVelocity, kPosition, kOrientation };
NeesBlock parse_nees_block(const std::string& name);
std::string to_string(NeesBlock block);
int nees_dim(NeesBlock block);

// (rotation, velocity, position) error in the filter's error convention:
// X_true = exp(xi) X_hat.
Vector9d core_error(const Eigen::Matrix3d& R_est, const Eigen::Vector3d& v_est,
                    const Eigen::Vector3d& p_est, const Eigen::Matrix3d& R_gt,
                    const Eigen::Vector3d& v_gt, const Eigen::Vector3d& p_gt);

struct NeesResult {
  NeesBlock block = NeesBlock::kCore;
  int dim = 9;
  std::vector<double> eps;  // NaN where the covariance block is singular
  double lower = 0.0;
  double upper = 0.0;
  double in_bounds = 0.0;  // fraction of evaluated steps
  int evaluated = 0;
  int skipped = 0;
  nlohmann::json summary() const;
};

NeesResult nees(std::span<const Vector9d> errors, std::span<const Matrix9d> P,
                NeesBlock block, double confidence = 0.95);
// Skips the first step, where the filter is initialized at truth.
NeesResult nees(const TrajectoryPair& pair, NeesBlock block, double confidence = 0.95);

// Contact covariance levels for the classical baselines.
struct BaselineOptions {
  double sigma_contact = 1e-4;  // m^2/s^2
  double sigma_free = 1e2;      // m^2/s^2
  double slip_factor = 10.0;
  double slip_speed = 0.1;  // m/s, true slip speed that triggers inflation
  double contact_speed = 0.25;
  double contact_height = 0.01;
  nlohmann::json to_json() const;
};

enum class ContactSource { kHeuristic, kGroundTruth, kGroundTruthSlip, kFree };
ContactSource parse_contact_source(const std::string& name);
std::string to_string(ContactSource source);

// Contact covariances for step k given the estimate after step k - 1.
using SigmaSource =
    std::function<std::vector<Eigen::Matrix3d>(int k, const FilterEstimate& current)>;

// Filter started at truth with the initial covariance, run over steps
// 1..end of the dataset.
TrajectoryPair run_filter(const EpisodeDataset& data, const RobotModel& model,
                          const NoiseParams& np, const SigmaSource& sigma,
                          const InitialCovariance& p0 = {});

TrajectoryPair heuristic_contact_filter(const EpisodeDataset& data,
                                        const RobotModel& model, const NoiseParams& np,
                                        ContactSource source,
                                        const BaselineOptions& options = {});

TrajectoryPair learned_contact_filter(const EpisodeDataset& data, const RobotModel& model,
                                      const NoiseParams& np, const ContactNet& net);

// Per-step CSV: time, errors, NEES and contact covariance traces.
std::string steps_csv(const TrajectoryPair& pair, const AteErrors& errors,
                      const NeesResult* core_nees);

// JSONL with the 9-dim core error and covariance block per step.
std::string core_errors_jsonl(const TrajectoryPair& pair);
void parse_core_errors_jsonl(const std::string& text, std::vector<Vector9d>& errors,
                             std::vector<Matrix9d>& P);

std::string nees_csv(const NeesResult& result);

// Markdown tables of RMSE / MAE / MED / STD per quantity.
std::string compare_table(const std::vector<std::pair<std::string, AteReport>>& runs);

}  // namespace ccinekf
