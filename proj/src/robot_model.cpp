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

#include "ccinekf/robot_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ccinekf/errors.hpp"
#include "ccinekf/liegroup.hpp"

namespace ccinekf {

using nlohmann::json;

namespace {

Eigen::Vector3d read_vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigurationError(std::string(what) + ": expected 3 numbers");
  }
  return Eigen::Vector3d(j[0].get<double>(), j[1].get<double>(),
                         j[2].get<double>());
}

json write_vec3(const Eigen::Vector3d& v) { return json{v.x(), v.y(), v.z()}; }

double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

// Index into `weights` drawn proportionally to the weights.
int weighted_pick(Rng& rng, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (u < weights[k]) return static_cast<int>(k);
    u -= weights[k];
  }
  return static_cast<int>(weights.size()) - 1;
}

Geometry parse_geometry(const json& j) {
  Geometry g;
  const std::string type = j.at("type").get<std::string>();
  if (j.contains("center")) g.center = read_vec3(j["center"], "geometry.center");
  if (type == "box") {
    g.kind = Geometry::Kind::kBox;
    g.size = read_vec3(j.at("size"), "geometry.size");
    if ((g.size.array() <= 0.0).any()) {
      throw ConfigurationError("box size must be positive");
    }
  } else if (type == "capsule") {
    g.kind = Geometry::Kind::kCapsule;
    g.radius = j.at("radius").get<double>();
    g.length = j.at("length").get<double>();
    if (g.radius <= 0.0 || g.length < 0.0) {
      throw ConfigurationError("invalid capsule dimensions");
    }
  } else if (type == "mesh") {
    g.kind = Geometry::Kind::kMesh;
    for (const auto& v : j.at("vertices")) {
      g.vertices.push_back(read_vec3(v, "mesh vertex"));
    }
    for (const auto& t : j.at("triangles")) {
      std::array<int, 3> tri{t.at(0).get<int>(), t.at(1).get<int>(),
                             t.at(2).get<int>()};
      for (int idx : tri) {
        if (idx < 0 || idx >= static_cast<int>(g.vertices.size())) {
          throw ConfigurationError("mesh triangle index out of range");
        }
      }
      g.triangles.push_back(tri);
    }
    if (g.triangles.empty()) throw ConfigurationError("mesh has no triangles");
  } else if (type != "none") {
    throw ConfigurationError("unknown geometry type '" + type + "'");
  }
  return g;
}

json geometry_to_json(const Geometry& g) {
  json j;
  switch (g.kind) {
    case Geometry::Kind::kNone:
      j["type"] = "none";
      return j;
    case Geometry::Kind::kBox:
      j["type"] = "box";
      j["size"] = write_vec3(g.size);
      break;
    case Geometry::Kind::kCapsule:
      j["type"] = "capsule";
      j["radius"] = g.radius;
      j["length"] = g.length;
      break;
    case Geometry::Kind::kMesh: {
      j["type"] = "mesh";
      json verts = json::array();
      for (const auto& v : g.vertices) verts.push_back(write_vec3(v));
      json tris = json::array();
      for (const auto& t : g.triangles) tris.push_back({t[0], t[1], t[2]});
      j["vertices"] = verts;
      j["triangles"] = tris;
      break;
    }
  }
  j["center"] = write_vec3(g.center);
  return j;
}

Eigen::Isometry3d joint_transform(const Joint& joint, double angle) {
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  T.translation() = joint.origin;
  if (joint.type == JointType::kRevolute) {
    T.linear() = joint.rotation * lie::so3_exp(joint.axis * angle);
  } else {
    T.linear() = joint.rotation;
  }
  return T;
}

bool is_axis(const Eigen::Vector3d& axis, int k) {
  return (axis - Eigen::Vector3d::Unit(k)).norm() < 1e-12;
}

}  // namespace

double Geometry::surface_area() const {
  switch (kind) {
    case Kind::kNone:
      return 0.0;
    case Kind::kBox:
      return 2.0 * (size.x() * size.y() + size.y() * size.z() +
                    size.z() * size.x());
    case Kind::kCapsule:
      return 2.0 * M_PI * radius * length + 4.0 * M_PI * radius * radius;
    case Kind::kMesh: {
      double area = 0.0;
      for (const auto& t : triangles) {
        area += triangle_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
      }
      return area;
    }
  }
  return 0.0;
}

Eigen::Vector3d Geometry::sample_surface(Rng& rng) const {
  switch (kind) {
    case Kind::kNone:
      throw ConfigurationError("link has no surface geometry");
    case Kind::kBox: {
      // Faces in pairs: normal x, y, z; each pair weighted by its area.
      const Eigen::Vector3d h = 0.5 * size;
      const std::vector<double> w{size.y() * size.z(), size.y() * size.z(),
                                  size.z() * size.x(), size.z() * size.x(),
                                  size.x() * size.y(), size.x() * size.y()};
      const int face = weighted_pick(rng, w);
      const int axis = face / 2;
      const double sign = (face % 2 == 0) ? 1.0 : -1.0;
      Eigen::Vector3d p;
      for (int k = 0; k < 3; ++k) p[k] = rng.uniform(-h[k], h[k]);
      p[axis] = sign * h[axis];
      return center + p;
    }
    case Kind::kCapsule: {
      const double cyl = 2.0 * M_PI * radius * length;
      const double sph = 4.0 * M_PI * radius * radius;
      if (rng.uniform() * (cyl + sph) < cyl) {
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        const double z = rng.uniform(-0.5 * length, 0.5 * length);
        return center + Eigen::Vector3d(radius * std::cos(phi),
                                        radius * std::sin(phi), z);
      }
      Eigen::Vector3d d = rng.normal3(1.0);
      while (d.norm() < 1e-12) d = rng.normal3(1.0);
      d.normalize();
      const double cap = d.z() >= 0.0 ? 0.5 * length : -0.5 * length;
      return center + radius * d + Eigen::Vector3d(0.0, 0.0, cap);
    }
    case Kind::kMesh: {
      std::vector<double> w;
      w.reserve(triangles.size());
      for (const auto& t : triangles) {
        w.push_back(
            triangle_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]));
      }
      const auto& t = triangles[weighted_pick(rng, w)];
      const double r1 = std::sqrt(rng.uniform());
      const double r2 = rng.uniform();
      return (1.0 - r1) * vertices[t[0]] + r1 * (1.0 - r2) * vertices[t[1]] +
             r1 * r2 * vertices[t[2]];
    }
  }
  return center;
}

int RobotModel::link_index(const std::string& name) const {
  for (std::size_t k = 0; k < links_.size(); ++k) {
    if (links_[k].name == name) return static_cast<int>(k);
  }
  throw ConfigurationError("unknown link '" + name + "'");
}

RobotModel RobotModel::from_json(const json& doc) {
  RobotModel m;
  try {
    m.name_ = doc.value("name", std::string("robot"));
    for (const auto& jl : doc.at("links")) {
      Link link;
      link.name = jl.at("name").get<std::string>();
      if (jl.contains("geometry")) link.geometry = parse_geometry(jl["geometry"]);
      m.links_.push_back(std::move(link));
    }
    if (m.links_.empty()) throw ConfigurationError("model has no links");
    std::set<std::string> names;
    for (const auto& l : m.links_) {
      if (!names.insert(l.name).second) {
        throw ConfigurationError("duplicate link '" + l.name + "'");
      }
    }

    for (const auto& jj : doc.value("joints", json::array())) {
      Joint joint;
      joint.name = jj.at("name").get<std::string>();
      const std::string type = jj.value("type", std::string("revolute"));
      if (type == "revolute") {
        joint.type = JointType::kRevolute;
      } else if (type == "fixed") {
        joint.type = JointType::kFixed;
      } else {
        throw ConfigurationError("unknown joint type '" + type + "'");
      }
      joint.parent_link = m.link_index(jj.at("parent").get<std::string>());
      joint.child_link = m.link_index(jj.at("child").get<std::string>());
      if (jj.contains("origin")) joint.origin = read_vec3(jj["origin"], "origin");
      if (jj.contains("rpy")) {
        const Eigen::Vector3d rpy = read_vec3(jj["rpy"], "rpy");
        joint.rotation = lie::rot_z(rpy.z()) * lie::rot_y(rpy.y()) *
                         lie::rot_x(rpy.x());
      }
      if (joint.type == JointType::kRevolute) {
        joint.axis = read_vec3(jj.at("axis"), "axis");
        if (std::abs(joint.axis.norm() - 1.0) > 1e-9) {
          throw ConfigurationError("joint '" + joint.name +
                                   "' axis is not unit norm");
        }
      }
      m.joints_.push_back(joint);
    }

    for (const auto& jl : doc.value("legs", json::array())) {
      Leg leg;
      leg.name = jl.at("name").get<std::string>();
      const auto& names_j = jl.at("joints");
      if (names_j.size() != 6) {
        throw ConfigurationError("leg '" + leg.name + "' needs six joints");
      }
      for (int k = 0; k < 6; ++k) {
        const std::string jn = names_j[k].get<std::string>();
        auto it = std::find_if(m.joints_.begin(), m.joints_.end(),
                               [&](const Joint& j) { return j.name == jn; });
        if (it == m.joints_.end()) {
          throw ConfigurationError("leg joint '" + jn + "' not found");
        }
        leg.joints[k] = static_cast<int>(it - m.joints_.begin());
      }
      m.legs_.push_back(leg);
    }

    const std::string imu =
        doc.contains("imu_frame")
            ? doc["imu_frame"].at("link").get<std::string>()
            : m.links_.front().name;
    m.imu_link_ = m.link_index(imu);

    int expected = 1;
    for (const auto& jc : doc.value("candidates", json::array())) {
      const int index = jc.value("index", expected);
      if (index != expected) {
        throw ConfigurationError("candidate indices must be contiguous 1..N");
      }
      ++expected;
      CandidatePoint c;
      c.name = jc.value("name", "c" + std::to_string(index));
      c.link = m.link_index(jc.at("link").get<std::string>());
      c.offset = read_vec3(jc.at("offset"), "candidate offset");
      m.candidates_.push_back(c);
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("robot model: ") + e.what());
  }
  m.finalize();
  return m;
}

void RobotModel::finalize() {
  const int nl = static_cast<int>(links_.size());
  for (auto& l : links_) l.parent_joint = -1;
  num_q_ = 0;
  for (std::size_t k = 0; k < joints_.size(); ++k) {
    Joint& j = joints_[k];
    if (links_[j.child_link].parent_joint != -1) {
      throw ConfigurationError("link '" + links_[j.child_link].name +
                               "' has two parent joints");
    }
    links_[j.child_link].parent_joint = static_cast<int>(k);
    j.q_index = j.type == JointType::kRevolute ? num_q_++ : -1;
  }
  if (links_[0].parent_joint != -1) {
    throw ConfigurationError("the first link must be the floating base");
  }
  chains_.assign(nl, {});
  for (int l = 0; l < nl; ++l) {
    int cur = l;
    std::vector<int> chain;
    while (links_[cur].parent_joint != -1) {
      chain.push_back(links_[cur].parent_joint);
      cur = joints_[links_[cur].parent_joint].parent_link;
      if (static_cast<int>(chain.size()) > static_cast<int>(joints_.size())) {
        throw ConfigurationError("kinematic tree contains a cycle");
      }
    }
    if (cur != 0) {
      throw ConfigurationError("link '" + links_[l].name +
                               "' is not connected to the base");
    }
    std::reverse(chain.begin(), chain.end());
    chains_[l] = std::move(chain);
  }

  static const int kAxes[6] = {2, 0, 1, 1, 1, 0};
  for (auto& leg : legs_) {
    for (int k = 0; k < 6; ++k) {
      const Joint& j = joints_[leg.joints[k]];
      if (j.type != JointType::kRevolute || !is_axis(j.axis, kAxes[k]) ||
          !j.rotation.isIdentity(1e-12)) {
        throw ConfigurationError("leg '" + leg.name +
                                 "' does not match the yaw-roll-pitch-knee-"
                                 "pitch-roll layout");
      }
      if (k > 0 && joints_[leg.joints[k]].parent_link !=
                       joints_[leg.joints[k - 1]].child_link) {
        throw ConfigurationError("leg '" + leg.name + "' joints not in series");
      }
    }
    const Joint& yaw = joints_[leg.joints[0]];
    if (yaw.parent_link != 0) {
      throw ConfigurationError("leg '" + leg.name + "' must attach to the base");
    }
    const auto offset = [&](int k) { return joints_[leg.joints[k]].origin; };
    const bool straight = offset(1).norm() < 1e-12 && offset(2).norm() < 1e-12 &&
                          offset(5).norm() < 1e-12 &&
                          offset(3).head<2>().norm() < 1e-12 &&
                          offset(4).head<2>().norm() < 1e-12 &&
                          offset(3).z() < 0.0 && offset(4).z() < 0.0;
    if (!straight) {
      throw ConfigurationError("leg '" + leg.name +
                               "' link offsets must point straight down");
    }
    leg.hip = yaw.origin;
    leg.thigh_length = -offset(3).z();
    leg.shank_length = -offset(4).z();
    leg.foot_link = joints_[leg.joints[5]].child_link;
  }

  for (const auto& c : candidates_) {
    if (c.link < 0 || c.link >= nl) {
      throw ConfigurationError("candidate references a missing link");
    }
  }
}

RobotModel RobotModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open robot model '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw InputError("robot model '" + path + "': " + e.what());
  }
  return from_json(doc);
}

json RobotModel::to_json() const {
  json doc;
  doc["name"] = name_;
  doc["imu_frame"] = {{"link", links_[imu_link_].name}};
  json links = json::array();
  for (const auto& l : links_) {
    json jl{{"name", l.name}};
    if (l.geometry.kind != Geometry::Kind::kNone) {
      jl["geometry"] = geometry_to_json(l.geometry);
    }
    links.push_back(jl);
  }
  doc["links"] = links;
  json joints = json::array();
  for (const auto& j : joints_) {
    json jj{{"name", j.name},
            {"type", j.type == JointType::kRevolute ? "revolute" : "fixed"},
            {"parent", links_[j.parent_link].name},
            {"child", links_[j.child_link].name},
            {"origin", write_vec3(j.origin)}};
    if (!j.rotation.isIdentity(0.0)) {
      const Eigen::Matrix3d& R = j.rotation;
      const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
      jj["rpy"] = {std::atan2(R(2, 1), R(2, 2)), pitch,
                   std::atan2(R(1, 0), R(0, 0))};
    }
    if (j.type == JointType::kRevolute) jj["axis"] = write_vec3(j.axis);
    joints.push_back(jj);
  }
  doc["joints"] = joints;
  if (!legs_.empty()) {
    json legs = json::array();
    for (const auto& leg : legs_) {
      json names = json::array();
      for (int id : leg.joints) names.push_back(joints_[id].name);
      legs.push_back({{"name", leg.name}, {"joints", names}});
    }
    doc["legs"] = legs;
  }
  json cands = json::array();
  for (std::size_t k = 0; k < candidates_.size(); ++k) {
    const auto& c = candidates_[k];
    cands.push_back({{"index", static_cast<int>(k) + 1},
                     {"name", c.name},
                     {"link", links_[c.link].name},
                     {"offset", write_vec3(c.offset)}});
  }
  doc["candidates"] = cands;
  return doc;
}

Eigen::Isometry3d RobotModel::link_pose(const Eigen::VectorXd& q,
                                        int link) const {
  if (q.size() != num_q_) {
    throw InputError("joint vector has " + std::to_string(q.size()) +
                     " entries, model expects " + std::to_string(num_q_));
  }
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  for (int jid : chains_[link]) {
    const Joint& j = joints_[jid];
    T = T * joint_transform(j, j.q_index >= 0 ? q[j.q_index] : 0.0);
  }
  return T;
}

std::vector<int> RobotModel::chain_q_indices(int link) const {
  std::vector<int> out;
  for (int jid : chains_[link]) {
    if (joints_[jid].q_index >= 0) out.push_back(joints_[jid].q_index);
  }
  return out;
}

RobotModel RobotModel::with_candidates(
    std::vector<CandidatePoint> candidates) const {
  RobotModel m = *this;
  m.candidates_ = std::move(candidates);
  m.finalize();
  return m;
}

namespace {

json box_link(const std::string& name, const Eigen::Vector3d& size,
              const Eigen::Vector3d& center) {
  return {{"name", name},
          {"geometry",
           {{"type", "box"}, {"size", write_vec3(size)},
            {"center", write_vec3(center)}}}};
}

json capsule_link(const std::string& name, double radius, double length,
                  const Eigen::Vector3d& center) {
  return {{"name", name},
          {"geometry",
           {{"type", "capsule"}, {"radius", radius}, {"length", length},
            {"center", write_vec3(center)}}}};
}

json revolute(const std::string& name, const std::string& parent,
              const std::string& child, const Eigen::Vector3d& origin,
              const Eigen::Vector3d& axis) {
  return {{"name", name}, {"type", "revolute"}, {"parent", parent},
          {"child", child}, {"origin", write_vec3(origin)},
          {"axis", write_vec3(axis)}};
}

json desk_biped_document() {
  constexpr double kThigh = 0.20;
  constexpr double kShank = 0.20;
  json links = json::array();
  json joints = json::array();
  json legs = json::array();
  links.push_back(box_link("base", {0.20, 0.16, 0.10}, {0.0, 0.0, 0.0}));
  for (const auto& [side, y] : {std::pair<std::string, double>{"l", 0.06},
                                std::pair<std::string, double>{"r", -0.06}}) {
    const std::string s = "_" + side;
    links.push_back({{"name", "hip_yaw" + s}});
    links.push_back({{"name", "hip_roll" + s}});
    links.push_back(capsule_link("thigh" + s, 0.025, kThigh - 0.05,
                                 {0.0, 0.0, -0.5 * kThigh}));
    links.push_back(capsule_link("shank" + s, 0.02, kShank - 0.04,
                                 {0.0, 0.0, -0.5 * kShank}));
    links.push_back({{"name", "ankle" + s}});
    links.push_back(box_link("foot" + s, {0.18, 0.08, 0.02}, {0.02, 0.0, -0.03}));
    joints.push_back(revolute("hip_yaw" + s, "base", "hip_yaw" + s,
                              {0.0, y, -0.05}, Eigen::Vector3d::UnitZ()));
    joints.push_back(revolute("hip_roll" + s, "hip_yaw" + s, "hip_roll" + s,
                              Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitX()));
    joints.push_back(revolute("hip_pitch" + s, "hip_roll" + s, "thigh" + s,
                              Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY()));
    joints.push_back(revolute("knee" + s, "thigh" + s, "shank" + s,
                              {0.0, 0.0, -kThigh}, Eigen::Vector3d::UnitY()));
    joints.push_back(revolute("ankle_pitch" + s, "shank" + s, "ankle" + s,
                              {0.0, 0.0, -kShank}, Eigen::Vector3d::UnitY()));
    joints.push_back(revolute("ankle_roll" + s, "ankle" + s, "foot" + s,
                              Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitX()));
    legs.push_back({{"name", side == "l" ? "left" : "right"},
                    {"joints",
                     {"hip_yaw" + s, "hip_roll" + s, "hip_pitch" + s,
                      "knee" + s, "ankle_pitch" + s, "ankle_roll" + s}}});
  }
  json doc;
  doc["name"] = "desk-biped";
  doc["imu_frame"] = {{"link", "base"}};
  doc["links"] = links;
  doc["joints"] = joints;
  doc["legs"] = legs;
  doc["candidates"] = {
      {{"index", 1}, {"name", "heel_l"}, {"link", "foot_l"},
       {"offset", {-0.06, 0.0, -0.04}}},
      {{"index", 2}, {"name", "toe_l"}, {"link", "foot_l"},
       {"offset", {0.10, 0.0, -0.04}}},
      {{"index", 3}, {"name", "heel_r"}, {"link", "foot_r"},
       {"offset", {-0.06, 0.0, -0.04}}},
      {{"index", 4}, {"name", "toe_r"}, {"link", "foot_r"},
       {"offset", {0.10, 0.0, -0.04}}}};
  return doc;
}

}  // namespace

RobotModel RobotModel::desk_biped() {
  return from_json(desk_biped_document());
}

RobotModel RobotModel::desk_biped_full_body() {
  json doc = desk_biped_document();
  doc["name"] = "desk-biped-full-body";
  json& c = doc["candidates"];
  const auto add = [&](const std::string& name, const std::string& link,
                       const Eigen::Vector3d& offset) {
    c.push_back({{"index", static_cast<int>(c.size()) + 1},
                 {"name", name},
                 {"link", link},
                 {"offset", write_vec3(offset)}});
  };
  add("knee_l", "shank_l", {0.025, 0.0, 0.0});
  add("knee_r", "shank_r", {0.025, 0.0, 0.0});
  add("base_rear_l", "base", {-0.10, 0.08, -0.05});
  add("base_rear_r", "base", {-0.10, -0.08, -0.05});
  add("base_front_l", "base", {0.10, 0.08, -0.05});
  add("base_front_r", "base", {0.10, -0.08, -0.05});
  return from_json(doc);
}

Eigen::Vector3d forward_kinematics(const RobotModel& model,
                                   const Eigen::VectorXd& q, int i) {
  if (i < 0 || i >= model.num_candidates()) throw CandidateNotFoundError(i + 1);
  const CandidatePoint& c = model.candidates()[i];
  return model.link_pose(q, c.link) * c.offset;
}

Eigen::Matrix3Xd point_jacobian(const RobotModel& model,
                                const Eigen::VectorXd& q, int i) {
  if (i < 0 || i >= model.num_candidates()) throw CandidateNotFoundError(i + 1);
  const CandidatePoint& c = model.candidates()[i];
  const Eigen::Vector3d point = model.link_pose(q, c.link) * c.offset;
  Eigen::Matrix3Xd J = Eigen::Matrix3Xd::Zero(3, model.num_joints());
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  for (int jid : model.chain(c.link)) {
    const Joint& j = model.joints()[jid];
    // Frame just before the joint rotation: its axis in the base frame.
    Eigen::Isometry3d pre = T;
    pre.translation() += T.linear() * j.origin;
    pre.linear() = T.linear() * j.rotation;
    if (j.q_index >= 0) {
      const Eigen::Vector3d axis = pre.linear() * j.axis;
      J.col(j.q_index) = axis.cross(point - pre.translation());
    }
    T = T * joint_transform(j, j.q_index >= 0 ? q[j.q_index] : 0.0);
  }
  return J;
}

Eigen::Matrix<double, 6, 1> leg_ik(const RobotModel& model, int leg_id,
                                   const Eigen::Vector3d& target) {
  if (leg_id < 0 || leg_id >= static_cast<int>(model.legs().size())) {
    throw ConfigurationError("leg " + std::to_string(leg_id) + " not found");
  }
  const Leg& leg = model.legs()[leg_id];
  const double l1 = leg.thigh_length;
  const double l2 = leg.shank_length;
  const Eigen::Vector3d r = target - leg.hip;
  const double dist = r.norm();
  const double lo = std::abs(l1 - l2);
  const double hi = l1 + l2;
  if (dist > hi * (1.0 + 1e-12) || dist < lo * (1.0 - 1e-12)) {
    const Eigen::Vector3d dir =
        dist > 0.0 ? Eigen::Vector3d(r / dist) : Eigen::Vector3d(0, 0, -1);
    const double reach = dist > hi ? hi : lo;
    throw ReachabilityError("leg '" + leg.name + "' cannot reach target",
                            leg.hip + reach * dir);
  }
  const double roll = std::atan2(r.y(), -r.z());
  const double x = r.x();
  const double z = -std::hypot(r.y(), r.z());
  const double cos_knee =
      std::clamp((dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double knee = std::acos(cos_knee);
  const double pitch = std::atan2(-x, -z) -
                       std::atan2(l2 * std::sin(knee), l1 + l2 * std::cos(knee));
  Eigen::Matrix<double, 6, 1> out;
  out << 0.0, roll, pitch, knee, 0.0, 0.0;
  return out;
}

Eigen::Matrix<double, 6, 1> leg_pose_ik(const RobotModel& model, int leg_id,
                                        const Eigen::Vector3d& ankle,
                                        const Eigen::Matrix3d& foot_rotation) {
  if (leg_id < 0 || leg_id >= static_cast<int>(model.legs().size())) {
    throw ConfigurationError("leg " + std::to_string(leg_id) + " not found");
  }
  const Leg& leg = model.legs()[leg_id];
  const double l1 = leg.thigh_length;
  const double l2 = leg.shank_length;
  // Hip seen from the ankle, in the foot frame.
  const Eigen::Vector3d r = foot_rotation.transpose() * (leg.hip - ankle);
  const double dist = r.norm();
  if (dist > (l1 + l2) * (1.0 + 1e-12) || dist < std::abs(l1 - l2)) {
    const Eigen::Vector3d dir = (ankle - leg.hip).normalized();
    const double reach = dist > l1 + l2 ? l1 + l2 : std::abs(l1 - l2);
    throw ReachabilityError("leg '" + leg.name + "' cannot reach foot pose",
                            leg.hip + reach * dir);
  }
  // Principal branch, so the roll stays small when the hip drops below the
  // ankle.
  const double ankle_roll =
      r.z() >= 0.0 ? std::atan2(r.y(), r.z()) : std::atan2(-r.y(), -r.z());
  const double wx = r.x();
  const double wz = std::cos(ankle_roll) * r.z() + std::sin(ankle_roll) * r.y();
  const double cos_knee =
      std::clamp((dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double knee = std::acos(cos_knee);
  const double ankle_pitch =
      std::atan2(-wx, wz) -
      std::atan2(l1 * std::sin(knee), l2 + l1 * std::cos(knee));
  // Remaining hip rotation Rz(yaw) Rx(roll) Ry(pitch).
  const Eigen::Matrix3d M = foot_rotation *
                            lie::rot_x(ankle_roll).transpose() *
                            lie::rot_y(knee + ankle_pitch).transpose();
  const double hip_roll = std::asin(std::clamp(M(2, 1), -1.0, 1.0));
  const double hip_pitch = std::atan2(-M(2, 0), M(2, 2));
  const double hip_yaw = std::atan2(-M(0, 1), M(1, 1));
  Eigen::Matrix<double, 6, 1> out;
  out << hip_yaw, hip_roll, hip_pitch, knee, ankle_pitch, ankle_roll;
  return out;
}

void set_leg_joints(const RobotModel& model, int leg_id,
                    const Eigen::Matrix<double, 6, 1>& angles,
                    Eigen::VectorXd& q) {
  const Leg& leg = model.legs().at(leg_id);
  for (int k = 0; k < 6; ++k) {
    q[model.joints()[leg.joints[k]].q_index] = angles[k];
  }
}

std::vector<int> farthest_point_sampling(std::span<const Eigen::Vector3d> pool,
                                         int count, int seed_index) {
  const int n = static_cast<int>(pool.size());
  if (count < 1 || count > n) {
    throw ConfigurationError("cannot select " + std::to_string(count) +
                             " points from a pool of " + std::to_string(n));
  }
  if (seed_index < 0 || seed_index >= n) {
    throw ConfigurationError("FPS seed index out of range");
  }
  std::vector<int> chosen{seed_index};
  std::vector<double> dist(n);
  for (int k = 0; k < n; ++k) dist[k] = (pool[k] - pool[seed_index]).norm();
  while (static_cast<int>(chosen.size()) < count) {
    int best = 0;
    for (int k = 1; k < n; ++k) {
      if (dist[k] > dist[best]) best = k;
    }
    chosen.push_back(best);
    for (int k = 0; k < n; ++k) {
      dist[k] = std::min(dist[k], (pool[k] - pool[best]).norm());
    }
  }
  return chosen;
}

std::vector<CandidatePoint> sample_candidates(
    const RobotModel& model, int count, const std::vector<std::string>& bodies,
    std::uint64_t seed) {
  if (bodies.empty()) throw ConfigurationError("empty body set");
  if (count < 1) throw ConfigurationError("candidate count must be >= 1");
  std::set<int> ids;
  for (const auto& b : bodies) ids.insert(model.link_index(b));

  struct Sample {
    int link;
    Eigen::Vector3d local;
  };
  std::vector<Sample> samples;
  std::vector<Eigen::Vector3d> pool;
  const Eigen::VectorXd q0 = Eigen::VectorXd::Zero(model.num_joints());
  for (int id : ids) {
    const Geometry& g = model.links()[id].geometry;
    if (g.kind == Geometry::Kind::kNone || g.surface_area() <= 0.0) {
      throw ConfigurationError("link '" + model.links()[id].name +
                               "' has no surface geometry");
    }
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(id)));
    const Eigen::Isometry3d T = model.link_pose(q0, id);
    for (int k = 0; k < 10 * count; ++k) {
      const Eigen::Vector3d local = g.sample_surface(rng);
      samples.push_back({id, local});
      pool.push_back(T * local);
    }
  }
  Rng pick(Rng::mix(seed, 0xF00DULL));
  const int start = static_cast<int>(pick.index(pool.size()));
  const std::vector<int> chosen = farthest_point_sampling(pool, count, start);
  std::vector<CandidatePoint> out;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const Sample& s = samples[chosen[k]];
    out.push_back({"c" + std::to_string(k + 1), s.link, s.local});
  }
  return out;
}

}  // namespace ccinekf
