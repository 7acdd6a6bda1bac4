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

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json_fwd.hpp>

#include "ccinekf/rng.hpp"

namespace ccinekf {

// Collision geometry attached to a link, used only for surface sampling.
// Capsules are aligned with the link z axis; `length` is the cylinder part.
struct Geometry {
  enum class Kind { kNone, kBox, kCapsule, kMesh };

  Kind kind = Kind::kNone;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Zero();
  double radius = 0.0;
  double length = 0.0;
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;

  double surface_area() const;
  // Uniform sample on the surface, in the link frame.
  Eigen::Vector3d sample_surface(Rng& rng) const;
};

struct Link {
  std::string name;
  int parent_joint = -1;
  Geometry geometry;
};

enum class JointType { kRevolute, kFixed };

struct Joint {
  std::string name;
  JointType type = JointType::kRevolute;
  int parent_link = -1;
  int child_link = -1;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  // Position in the joint vector q, -1 for fixed joints.
  int q_index = -1;
};

struct CandidatePoint {
  std::string name;
  int link = 0;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
};

// A six-joint leg: hip yaw (z), hip roll (x), hip pitch (y), knee pitch (y),
// ankle pitch (y), ankle roll (x). The three hip axes meet at the hip
// point and the two ankle axes meet at the ankle point, which is the origin
// of the foot link.
struct Leg {
  std::string name;
  std::array<int, 6> joints{};
  int foot_link = -1;
  double thigh_length = 0.0;
  double shank_length = 0.0;
  Eigen::Vector3d hip = Eigen::Vector3d::Zero();

  double max_reach() const { return thigh_length + shank_length; }
};

class RobotModel {
 public:
  static RobotModel from_json(const nlohmann::json& doc);
  static RobotModel load(const std::string& path);
  nlohmann::json to_json() const;

  // Reference biped with heel and toe candidates on both feet (N = 4).
  static RobotModel desk_biped();
  // Same robot with ten candidates spread over feet, knees and the base.
  static RobotModel desk_biped_full_body();

  const std::string& name() const { return name_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<Leg>& legs() const { return legs_; }
  const std::vector<CandidatePoint>& candidates() const { return candidates_; }
  int imu_link() const { return imu_link_; }

  int num_joints() const { return num_q_; }
  int num_candidates() const { return static_cast<int>(candidates_.size()); }
  int link_index(const std::string& name) const;

  // Pose of a link frame expressed in the base frame.
  Eigen::Isometry3d link_pose(const Eigen::VectorXd& q, int link) const;

  // Joint ids on the path from the base to `link`, base first.
  const std::vector<int>& chain(int link) const { return chains_[link]; }
  // q indices of the revolute joints on that path.
  std::vector<int> chain_q_indices(int link) const;

  RobotModel with_candidates(std::vector<CandidatePoint> candidates) const;

 private:
  void finalize();

  std::string name_;
  std::vector<Link> links_;
  std::vector<Joint> joints_;
  std::vector<Leg> legs_;
  std::vector<CandidatePoint> candidates_;
  std::vector<std::vector<int>> chains_;
  int imu_link_ = 0;
  int num_q_ = 0;
};

// h_{C_i}(q): candidate position relative to the base, in the base frame.
Eigen::Vector3d forward_kinematics(const RobotModel& model,
                                   const Eigen::VectorXd& q, int i);

// dh_{C_i}/dq, 3 x num_joints; columns of joints off the chain are zero.
Eigen::Matrix3Xd point_jacobian(const RobotModel& model,
                                const Eigen::VectorXd& q, int i);

// Closed-form position IK for the hip roll / hip pitch / knee sub-chain with
// the knee bending forward; hip yaw and both ankle joints are left at zero.
// The target is the ankle point in the base frame. Returns the six leg joint
// angles in leg order.
Eigen::Matrix<double, 6, 1> leg_ik(const RobotModel& model, int leg,
                                   const Eigen::Vector3d& target);

// Full six-joint IK placing the foot frame at (ankle, foot_rotation), both in
// the base frame.
Eigen::Matrix<double, 6, 1> leg_pose_ik(const RobotModel& model, int leg,
                                        const Eigen::Vector3d& ankle,
                                        const Eigen::Matrix3d& foot_rotation);

// Writes leg joint angles into the matching slots of q.
void set_leg_joints(const RobotModel& model, int leg,
                    const Eigen::Matrix<double, 6, 1>& angles,
                    Eigen::VectorXd& q);

// Greedy farthest point sampling starting from `seed_index`. Ties resolve to
// the lowest index.
std::vector<int> farthest_point_sampling(std::span<const Eigen::Vector3d> pool,
                                         int count, int seed_index);

// Automated candidate placement: 10*count surface samples per listed body in
// the zero (nominal) pose, then farthest point sampling.
std::vector<CandidatePoint> sample_candidates(
    const RobotModel& model, int count, const std::vector<std::string>& bodies,
    std::uint64_t seed);

}  // namespace ccinekf
