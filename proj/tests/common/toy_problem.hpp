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
#include "ccinekf/rng.hpp"
#include "ccinekf/robot_model.hpp"
#include "ccinekf/rollout.hpp"

// Small fixed problem shared by the gradient tests and the acceptance run.
namespace ccinekf::testing_support {

inline Eigen::MatrixXd random_matrix(Rng& rng, int r, int c, double s = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  return m;
}

// One-joint leg: a shin on a pitch joint, one foot point on the shin and one
// point on the base.
inline RobotModel toy_model() {
  const nlohmann::json doc = R"({
    "name": "toy",
    "imu_frame": {"link": "base"},
    "links": [
      {"name": "base", "geometry": {"type": "box", "size": [0.2, 0.1, 0.1]}},
      {"name": "shin", "geometry": {"type": "capsule", "radius": 0.02,
                                    "length": 0.3, "center": [0, 0, -0.15]}}
    ],
    "joints": [
      {"name": "pitch", "type": "revolute", "parent": "base", "child": "shin",
       "origin": [0, 0, -0.05], "axis": [0, 1, 0]}
    ],
    "candidates": [
      {"index": 1, "name": "foot", "link": "shin", "offset": [0.03, 0, -0.3]},
      {"index": 2, "name": "corner", "link": "base", "offset": [0.1, 0.05, -0.05]}
    ]
  })"_json;
  return RobotModel::from_json(doc);
}

struct ToyProblem {
  RobotModel model = toy_model();
  FeatureLayout layout;
  ContactNet net;
  FilterEstimate initial;
  std::vector<BufferStep> steps;
  NoiseParams np;
};

inline ToyProblem make_toy(int length, std::uint64_t seed, const std::string& activation) {
  ToyProblem p;
  p.layout = FeatureLayout::from_model(p.model, 4);
  ContactNetArch arch = ContactNetArch::for_layout(p.layout, {2, 8});
  arch.activation = activation;
  p.net = ContactNet::initialize(arch, seed);
  Rng rng(seed + 1);
  // Shift the initialization so the covariances land around 1e-3.
  p.net.layers().back().b << -3.0, 0.0, -3.0, 0.0, 0.0, -3.0;
  const int n = p.model.num_candidates();

  Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 0.2);
  FilterState x = FilterState::Zero(n);
  x.R = lie::so3_exp(Eigen::Vector3d(0.05, -0.02, 0.3));
  x.v = Eigen::Vector3d(0.2, 0.05, 0.0);
  x.p = Eigen::Vector3d(0.0, 0.0, 0.35);
  for (int i = 0; i < n; ++i) x.pc.col(i) = x.p + x.R * forward_kinematics(p.model, q, i);
  p.initial.x = x;
  p.initial.P = InitialCovariance{}.matrix(n);

  Eigen::Matrix3d Rg = x.R;
  Eigen::Vector3d vg = x.v;
  for (int k = 0; k < length; ++k) {
    BufferStep s;
    s.imu.w = Eigen::Vector3d(0.1, -0.2, 0.4) + 0.05 * random_matrix(rng, 3, 1);
    s.imu.a = -(Rg.transpose() * p.np.gravity) + 0.2 * random_matrix(rng, 3, 1);
    s.imu.dt = 0.005;
    q[0] += 0.01 * rng.normal();
    s.q = q;
    s.features = random_matrix(rng, p.layout.input_dim(), n);
    Rg = Rg * lie::so3_exp(s.imu.w * s.imu.dt);
    vg += 0.01 * random_matrix(rng, 3, 1);
    s.R_gt = Rg;
    s.v_gt = vg;
    p.steps.push_back(s);
  }
  return p;
}

}  // namespace ccinekf::testing_support
