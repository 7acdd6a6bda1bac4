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

#include "ccinekf/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <Eigen/Geometry>

#include "ccinekf/errors.hpp"
#include "ccinekf/rng.hpp"

namespace ccinekf {

using nlohmann::json;

namespace {

constexpr double kAnkleHeight = 0.04;
constexpr double kTwoPi = 2.0 * M_PI;

double quintic(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

double wrap_angle(double a) { return std::remainder(a, kTwoPi); }

Eigen::Matrix3d rpy(double roll, double pitch, double yaw) {
  return lie::rot_z(yaw) * lie::rot_y(pitch) * lie::rot_x(roll);
}

Eigen::Vector3d horizontal(double angle) {
  return Eigen::Vector3d(std::cos(angle), std::sin(angle), 0.0);
}

struct FootTarget {
  Eigen::Vector3d ankle;
  double yaw = 0.0;
  Eigen::Vector3d slip = Eigen::Vector3d::Zero();
};

struct BasePose {
  Eigen::Matrix3d R;
  Eigen::Vector3d p;
};

// A scripted scene: base pose and per-leg foot targets as functions of time.
class Script {
 public:
  virtual ~Script() = default;
  virtual BasePose base(double t) const = 0;
  virtual FootTarget foot(int leg, double t) const = 0;
  // World slip velocity of a body link (non-foot candidates).
  virtual Eigen::Vector3d body_slip(double) const { return Eigen::Vector3d::Zero(); }
};

struct SlipDraw {
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  double duration = 0.0;
};

SlipDraw draw_slip(const SimConfig& cfg, double probability, double max_duration,
                   Rng& rng) {
  SlipDraw d;
  if (!(rng.uniform() < probability)) return d;
  const double speed = rng.uniform(cfg.slip.speed_min, cfg.slip.speed_max);
  const double angle = rng.uniform(-M_PI, M_PI);
  Eigen::Vector3d dir = cfg.slip.direction;
  dir.z() = 0.0;
  dir = dir.norm() > 0.0 ? Eigen::Vector3d(dir.normalized()) : horizontal(angle);
  d.velocity = speed * dir;
  d.duration = std::min(cfg.slip.max_duration, max_duration);
  return d;
}

double slip_probability(const SimConfig& cfg, Rng& rng) {
  const double mu = rng.uniform(cfg.friction_min, cfg.friction_max);
  return std::min(1.0, cfg.slip.probability * cfg.friction_min / mu);
}

struct Kick {
  double time = 0.0;
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
};

// Displacement of a smoothed velocity kick; the velocity rises and decays
// over about 50 ms with peak equal to the kick magnitude.
Eigen::Vector3d kick_offset(const std::vector<Kick>& kicks, double t) {
  constexpr double kRise = 0.0707;
  const double gain = kRise * std::exp(0.5) / std::sqrt(2.0);
  Eigen::Vector3d out = Eigen::Vector3d::Zero();
  for (const Kick& k : kicks) {
    const double tau = t - k.time;
    if (tau <= 0.0) continue;
    const double x = tau / kRise;
    out += k.velocity * gain * (1.0 - std::exp(-x * x));
  }
  return out;
}

class GaitScript : public Script {
 public:
  GaitScript(const RobotModel& model, const SimConfig& cfg) : cfg_(cfg) {
    Rng rng(Rng::mix(cfg.seed, 2));
    GaitParams g = cfg.gait;
    double speed_scale = 1.0;
    double amp = 1.0;
    if (cfg.randomize) {
      speed_scale = rng.uniform(0.5, 1.0);
      g.period *= rng.uniform(0.9, 1.1);
      g.turn_rate += rng.uniform(-0.3, 0.3);
      amp = rng.uniform(0.5, 1.5);
      heading0_ = rng.uniform(-M_PI, M_PI);
      origin_ = Eigen::Vector3d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0);
      t0_ = rng.uniform(0.0, g.period);
    }
    g.sway *= amp;
    g.bob *= amp;
    g.roll *= amp;
    g.pitch *= amp;
    g.yaw *= amp;
    gait_ = g;
    speed_ = 2.0 * g.step_length * speed_scale / g.period;
    slip_probability_ = slip_probability(cfg, rng);
    for (const Leg& leg : model.legs()) {
      hip_lateral_.push_back(leg.hip.y());
      height_ = kAnkleHeight - leg.hip.z() + 0.32;
    }
    if (cfg.disturbance.period > 0.0 && cfg.disturbance.max_kick > 0.0) {
      Rng kr(Rng::mix(cfg.seed, 4));
      const double P = cfg.disturbance.period;
      for (double base = P; base < cfg.duration + P; base += P) {
        Kick k;
        k.time = base + P * kr.uniform(-0.25, 0.25);
        k.velocity = kr.uniform(0.0, cfg.disturbance.max_kick) *
                     horizontal(kr.uniform(-M_PI, M_PI));
        kicks_.push_back(k);
      }
    }
  }

  BasePose base(double t) const override {
    const GaitParams& g = gait_;
    const double ph = kTwoPi * (t + t0_) / g.period;
    const double heading = heading_at(t);
    const Eigen::Vector3d lateral = horizontal(heading + M_PI / 2.0);
    BasePose b;
    b.p = path(t) + g.sway * std::sin(ph) * lateral +
          Eigen::Vector3d(0.0, 0.0, height_ + g.bob * std::cos(2.0 * ph)) +
          kick_offset(kicks_, t);
    b.R = rpy(g.roll * std::sin(ph), g.pitch * std::sin(2.0 * ph),
              heading + g.yaw * std::sin(ph));
    return b;
  }

  FootTarget foot(int leg, double t) const override {
    const GaitParams& g = gait_;
    const double phase_offset = leg == 0 ? 0.0 : 0.5;
    const double u = (t + t0_) / g.period + phase_offset;
    const double n = std::floor(u);
    const double frac = u - n;
    const long stance = static_cast<long>(n);
    FootTarget f;
    if (frac < g.duty_cycle) {
      const double since = frac * g.period;
      const SlipDraw s = slip(leg, stance);
      f.ankle = foothold(leg, stance) + s.velocity * std::min(since, s.duration);
      f.yaw = foothold_yaw(leg, stance);
      if (since < s.duration) f.slip = s.velocity;
      return f;
    }
    const double tau = (frac - g.duty_cycle) / (1.0 - g.duty_cycle);
    const SlipDraw s = slip(leg, stance);
    const Eigen::Vector3d from = foothold(leg, stance) + s.velocity * s.duration;
    const Eigen::Vector3d to = foothold(leg, stance + 1);
    const double k = quintic(tau);
    const double lift = std::sin(M_PI * tau);
    f.ankle = from + k * (to - from);
    f.ankle.z() += g.step_height * lift * lift;
    const double y0 = foothold_yaw(leg, stance);
    f.yaw = y0 + k * wrap_angle(foothold_yaw(leg, stance + 1) - y0);
    return f;
  }

 private:
  double heading_at(double t) const { return heading0_ + gait_.turn_rate * t; }

  Eigen::Vector3d path(double t) const {
    const double w = gait_.turn_rate;
    if (std::abs(w) < 1e-9) return origin_ + speed_ * t * horizontal(heading0_);
    const double r = speed_ / w;
    const double a = heading0_ + w * t;
    return origin_ + r * Eigen::Vector3d(std::sin(a) - std::sin(heading0_),
                                         std::cos(heading0_) - std::cos(a), 0.0);
  }

  double stance_mid(int leg, long n) const {
    const double phase_offset = leg == 0 ? 0.0 : 0.5;
    return (static_cast<double>(n) - phase_offset + 0.5 * gait_.duty_cycle) *
               gait_.period -
           t0_;
  }

  Eigen::Vector3d foothold(int leg, long n) const {
    const double tm = stance_mid(leg, n);
    Eigen::Vector3d f = path(tm) + hip_lateral_[leg] * horizontal(heading_at(tm) + M_PI / 2.0);
    f.z() = kAnkleHeight;
    return f;
  }

  double foothold_yaw(int leg, long n) const { return heading_at(stance_mid(leg, n)); }

  SlipDraw slip(int leg, long n) const {
    Rng rng(Rng::mix(Rng::mix(cfg_.seed, 3),
                     (static_cast<std::uint64_t>(leg) << 40) +
                         static_cast<std::uint64_t>(n + (1L << 30))));
    return draw_slip(cfg_, slip_probability_, gait_.duty_cycle * gait_.period, rng);
  }

  const SimConfig& cfg_;
  GaitParams gait_;
  double speed_ = 0.0;
  double heading0_ = 0.0;
  Eigen::Vector3d origin_ = Eigen::Vector3d::Zero();
  double t0_ = 0.0;
  double height_ = 0.41;
  double slip_probability_ = 0.0;
  std::vector<double> hip_lateral_;
  std::vector<Kick> kicks_;
};

// Stand, sit back onto the rear edge of the base, rock about that edge,
// roll about one rear corner, then stand up again. Feet stay planted.
class GroundScript : public Script {
 public:
  GroundScript(const RobotModel& model, const SimConfig& cfg) {
    Rng rng(Rng::mix(cfg.seed, 2));
    double scale = 1.0;
    if (cfg.randomize) {
      heading0_ = rng.uniform(-M_PI, M_PI);
      origin_ = Eigen::Vector3d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0);
      scale = rng.uniform(0.9, 1.1);
      rock_ = rng.uniform(0.08, 0.15);
      roll_ = rng.uniform(0.12, 0.2);
      roll_left_ = rng.uniform() < 0.5;
    }
    sit_pitch_ = -0.5 * scale;
    for (const Leg& leg : model.legs()) {
      feet_.push_back(Eigen::Vector3d(0.0, leg.hip.y(), kAnkleHeight));
      hip_z_ = leg.hip.z();
    }
    stand_height_ = kAnkleHeight - hip_z_ + 0.32;
    const double T = cfg.duration;
    // Phase boundaries as fractions of the episode.
    const double f[] = {0.1, 0.25, 0.3, 0.5, 0.7, 0.85};
    for (double x : f) marks_.push_back(x * T);
    // Rear-edge midpoint and the rear corners in the base frame.
    edge_ = Eigen::Vector3d(-0.10, 0.0, -0.05);
    corner_ = Eigen::Vector3d(-0.10, roll_left_ ? 0.08 : -0.08, -0.05);
    // Sit with the hips 0.26 m behind the feet.
    const double hip_offset = 0.10 * std::cos(sit_pitch_);
    sit_edge_ = Eigen::Vector3d(-0.26 - hip_offset, 0.0, 0.0);
    stand_edge_ = Eigen::Vector3d(0.0, 0.0, stand_height_) + edge_;
    const SlipDraw s = draw_slip(cfg, slip_probability(cfg, rng),
                                 marks_[3] - marks_[2], rng);
    slip_ = s.velocity;
    slip_duration_ = s.duration;
  }

  BasePose base(double t) const override {
    BasePose local = local_base(t);
    const Eigen::Vector3d drift = slip_ * std::clamp(t - marks_[2], 0.0, slip_duration_);
    BasePose b;
    b.R = lie::rot_z(heading0_) * local.R;
    b.p = lie::rot_z(heading0_) * (local.p + drift) + origin_;
    return b;
  }

  FootTarget foot(int leg, double) const override {
    FootTarget f;
    f.ankle = lie::rot_z(heading0_) * feet_[leg] + origin_;
    f.yaw = heading0_;
    return f;
  }

  Eigen::Vector3d body_slip(double t) const override {
    if (t >= marks_[2] && t < marks_[2] + slip_duration_) {
      return lie::rot_z(heading0_) * slip_;
    }
    return Eigen::Vector3d::Zero();
  }

 private:
  BasePose about(const Eigen::Matrix3d& R, const Eigen::Vector3d& pivot_world,
                 const Eigen::Vector3d& pivot_body) const {
    return BasePose{R, pivot_world - R * pivot_body};
  }

  BasePose local_base(double t) const {
    const auto& m = marks_;
    const Eigen::Matrix3d sit = lie::rot_y(sit_pitch_);
    if (t < m[0]) return about(Eigen::Matrix3d::Identity(), stand_edge_, edge_);
    if (t < m[1] || t >= m[4]) {
      // Sitting down, or standing up in reverse.
      double s = t < m[1] ? quintic((t - m[0]) / (m[1] - m[0]))
                          : 1.0 - quintic((t - m[4]) / (m[5] - m[4]));
      if (t >= m[5]) s = 0.0;
      const Eigen::Vector3d pivot = stand_edge_ + s * (sit_edge_ - stand_edge_);
      return about(lie::rot_y(s * sit_pitch_), pivot, edge_);
    }
    if (t < m[2]) return about(sit, sit_edge_, edge_);
    if (t < m[3]) {
      const double w = std::sin(M_PI * (t - m[2]) / (m[3] - m[2]));
      return about(lie::rot_y(sit_pitch_ + rock_ * w * w), sit_edge_, edge_);
    }
    // Roll about one rear corner, lifting the other.
    const double w = std::sin(M_PI * (t - m[3]) / (m[4] - m[3]));
    const double sign = roll_left_ ? -1.0 : 1.0;
    const Eigen::Vector3d pivot = sit_edge_ + sit * (corner_ - edge_);
    return about(sit * lie::rot_x(sign * roll_ * w * w), pivot, corner_);
  }

  double heading0_ = 0.0;
  Eigen::Vector3d origin_ = Eigen::Vector3d::Zero();
  double sit_pitch_ = -0.5;
  double rock_ = 0.12;
  double roll_ = 0.15;
  bool roll_left_ = true;
  double hip_z_ = -0.05;
  double stand_height_ = 0.41;
  std::vector<Eigen::Vector3d> feet_;
  std::vector<double> marks_;
  Eigen::Vector3d edge_, corner_, sit_edge_, stand_edge_;
  Eigen::Vector3d slip_ = Eigen::Vector3d::Zero();
  double slip_duration_ = 0.0;
};

std::string vec_text(const double* x, int n) {
  std::string s = "[";
  for (int k = 0; k < n; ++k) {
    if (k) s += ",";
    s += format_double(x[k]);
  }
  return s + "]";
}

template <typename V>
std::string vec_text(const V& v) {
  const Eigen::VectorXd e = v;
  return vec_text(e.data(), static_cast<int>(e.size()));
}

Eigen::VectorXd read_vec(const json& j, const char* key) {
  const auto& a = j.at(key);
  Eigen::VectorXd v(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) v[k] = a[k].get<double>();
  return v;
}

Eigen::Vector3d read_vec3(const json& j, const char* key) {
  const Eigen::VectorXd v = read_vec(j, key);
  if (v.size() != 3) throw InputError(std::string("field '") + key + "' needs 3 values");
  return v;
}

Eigen::Matrix3Xd read_points(const json& j, const char* key, int n) {
  const auto& a = j.at(key);
  if (static_cast<int>(a.size()) != n) {
    throw InputError(std::string("field '") + key + "' has the wrong length");
  }
  Eigen::Matrix3Xd m(3, n);
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < 3; ++r) m(r, i) = a[i].at(r).get<double>();
  }
  return m;
}

}  // namespace

void write_file_atomically(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
    if (!out) throw InputError("failed writing '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

bool ground_truth_contact(double xy_speed, double height) {
  return xy_speed <= 0.25 && height <= 0.01;
}

SimConfig SimConfig::noise_free(std::string scenario, std::uint64_t seed) {
  SimConfig c;
  c.scenario = std::move(scenario);
  c.seed = seed;
  c.slip.probability = 0.0;
  c.disturbance.period = 0.0;
  c.imu = ImuNoise{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  c.encoder = 0.0;
  return c;
}

void SimConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigurationError("invalid simulation config: " + what);
  };
  require(scenario == "gait" || scenario == "ground", "scenario must be gait or ground");
  require(rate > 0.0, "rate must be positive");
  require(duration > 0.0, "duration must be positive");
  require(gait.duty_cycle > 0.0 && gait.duty_cycle < 1.0, "duty cycle must be in (0, 1)");
  require(gait.period > 0.0, "gait period must be positive");
  require(gait.step_length >= 0.0 && gait.step_height >= 0.0, "step sizes must be >= 0");
  require(slip.probability >= 0.0 && slip.probability <= 1.0,
          "slip probability must be in [0, 1]");
  require(slip.speed_min >= 0.0 && slip.speed_max >= slip.speed_min, "slip speed range");
  require(slip.max_duration >= 0.0, "slip duration must be >= 0");
  require(friction_min > 0.0 && friction_max >= friction_min, "friction range");
  require(disturbance.period >= 0.0 && disturbance.max_kick >= 0.0, "disturbances");
  require(imu.gyro >= 0.0 && imu.accel >= 0.0 && imu.gyro_bias >= 0.0 &&
              imu.accel_bias >= 0.0 && imu.gyro_bias_init >= 0.0 &&
              imu.accel_bias_init >= 0.0 && encoder >= 0.0,
          "noise levels must be >= 0");
}

json SimConfig::to_json() const {
  return json{
      {"scenario", scenario},
      {"duration", duration},
      {"rate", rate},
      {"gait",
       {{"step_length", gait.step_length},
        {"step_height", gait.step_height},
        {"duty_cycle", gait.duty_cycle},
        {"period", gait.period},
        {"sway", gait.sway},
        {"bob", gait.bob},
        {"roll", gait.roll},
        {"pitch", gait.pitch},
        {"yaw", gait.yaw},
        {"turn_rate", gait.turn_rate}}},
      {"slip",
       {{"probability", slip.probability},
        {"speed_min", slip.speed_min},
        {"speed_max", slip.speed_max},
        {"direction", {slip.direction.x(), slip.direction.y(), slip.direction.z()}},
        {"max_duration", slip.max_duration}}},
      {"friction", {friction_min, friction_max}},
      {"disturbance",
       {{"max_kick", disturbance.max_kick}, {"period", disturbance.period}}},
      {"imu",
       {{"gyro", imu.gyro},
        {"accel", imu.accel},
        {"gyro_bias", imu.gyro_bias},
        {"accel_bias", imu.accel_bias},
        {"gyro_bias_init", imu.gyro_bias_init},
        {"accel_bias_init", imu.accel_bias_init}}},
      {"encoder", encoder},
      {"randomize", randomize},
      {"seed", seed}};
}

SimConfig SimConfig::from_json(const json& j) {
  SimConfig c;
  try {
    c.scenario = j.value("scenario", c.scenario);
    c.duration = j.value("duration", c.duration);
    c.rate = j.value("rate", c.rate);
    if (j.contains("gait")) {
      const json& g = j["gait"];
      c.gait.step_length = g.value("step_length", c.gait.step_length);
      c.gait.step_height = g.value("step_height", c.gait.step_height);
      c.gait.duty_cycle = g.value("duty_cycle", c.gait.duty_cycle);
      c.gait.period = g.value("period", c.gait.period);
      c.gait.sway = g.value("sway", c.gait.sway);
      c.gait.bob = g.value("bob", c.gait.bob);
      c.gait.roll = g.value("roll", c.gait.roll);
      c.gait.pitch = g.value("pitch", c.gait.pitch);
      c.gait.yaw = g.value("yaw", c.gait.yaw);
      c.gait.turn_rate = g.value("turn_rate", c.gait.turn_rate);
    }
    if (j.contains("slip")) {
      const json& s = j["slip"];
      c.slip.probability = s.value("probability", c.slip.probability);
      c.slip.speed_min = s.value("speed_min", c.slip.speed_min);
      c.slip.speed_max = s.value("speed_max", c.slip.speed_max);
      if (s.contains("direction")) c.slip.direction = read_vec3(s, "direction");
      c.slip.max_duration = s.value("max_duration", c.slip.max_duration);
    }
    if (j.contains("friction")) {
      c.friction_min = j["friction"].at(0).get<double>();
      c.friction_max = j["friction"].at(1).get<double>();
    }
    if (j.contains("disturbance")) {
      const json& d = j["disturbance"];
      c.disturbance.max_kick = d.value("max_kick", c.disturbance.max_kick);
      c.disturbance.period = d.value("period", c.disturbance.period);
    }
    if (j.contains("imu")) {
      const json& m = j["imu"];
      c.imu.gyro = m.value("gyro", c.imu.gyro);
      c.imu.accel = m.value("accel", c.imu.accel);
      c.imu.gyro_bias = m.value("gyro_bias", c.imu.gyro_bias);
      c.imu.accel_bias = m.value("accel_bias", c.imu.accel_bias);
      c.imu.gyro_bias_init = m.value("gyro_bias_init", c.imu.gyro_bias_init);
      c.imu.accel_bias_init = m.value("accel_bias_init", c.imu.accel_bias_init);
    }
    c.encoder = j.value("encoder", c.encoder);
    c.randomize = j.value("randomize", c.randomize);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("bad simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

EpisodeDataset generate_episode(const RobotModel& model, const SimConfig& cfg) {
  cfg.validate();
  if (model.legs().empty()) throw ConfigurationError("the simulator needs a legged model");
  std::unique_ptr<Script> script;
  if (cfg.scenario == "gait") {
    script = std::make_unique<GaitScript>(model, cfg);
  } else {
    script = std::make_unique<GroundScript>(model, cfg);
  }

  const double dt = 1.0 / cfg.rate;
  const int steps = static_cast<int>(std::llround(cfg.duration * cfg.rate));
  const int n = model.num_candidates();
  const int nq = model.num_joints();
  const Eigen::Vector3d gravity = NoiseParams{}.gravity;
  const double h = 1e-5;

  // Feet of each leg, for slip labels.
  std::vector<int> foot_leg(model.links().size(), -1);
  for (std::size_t l = 0; l < model.legs().size(); ++l) {
    foot_leg[model.legs()[l].foot_link] = static_cast<int>(l);
  }

  EpisodeDataset ds;
  ds.model_name = model.name();
  ds.scenario = cfg.scenario;
  ds.rate = cfg.rate;
  ds.num_candidates = n;
  ds.num_joints = nq;
  ds.steps.reserve(steps);

  Rng noise(Rng::mix(cfg.seed, 1));
  const double sq = std::sqrt(dt);
  Eigen::Vector3d bg, ba;
  for (int r = 0; r < 3; ++r) bg[r] = noise.uniform(-1.0, 1.0) * cfg.imu.gyro_bias_init;
  for (int r = 0; r < 3; ++r) ba[r] = noise.uniform(-1.0, 1.0) * cfg.imu.accel_bias_init;

  Eigen::Matrix3d R_prev;
  Eigen::Vector3d v_prev, p_prev;
  Eigen::VectorXd q_prev;
  Eigen::Matrix3Xd pc_prev;
  for (int k = -1; k < steps; ++k) {
    const double t = k * dt;
    const BasePose pose = script->base(t);
    const Eigen::Vector3d v =
        (script->base(t + h).p - script->base(t - h).p) / (2.0 * h);
    const Eigen::Vector3d p =
        k < 0 ? pose.p : Eigen::Vector3d(p_prev + 0.5 * (v_prev + v) * dt);

    Eigen::VectorXd q = Eigen::VectorXd::Zero(nq);
    std::vector<Eigen::Vector3d> leg_slip(model.legs().size());
    for (int leg = 0; leg < static_cast<int>(model.legs().size()); ++leg) {
      const FootTarget f = script->foot(leg, t);
      leg_slip[leg] = f.slip;
      const Eigen::Vector3d ankle = pose.R.transpose() * (f.ankle - p);
      const Eigen::Matrix3d foot_R = pose.R.transpose() * lie::rot_z(f.yaw);
      try {
        set_leg_joints(model, leg, leg_pose_ik(model, leg, ankle, foot_R), q);
      } catch (const ReachabilityError&) {
        std::ostringstream msg;
        msg << "step " << k << ": leg '" << model.legs()[leg].name
            << "' cannot reach foothold (" << f.ankle.x() << ", " << f.ankle.y()
            << ", " << f.ankle.z() << ")";
        throw GenerationError(msg.str(), k);
      }
    }
    Eigen::Matrix3Xd pc(3, n);
    for (int i = 0; i < n; ++i) pc.col(i) = p + pose.R * forward_kinematics(model, q, i);

    if (k >= 0) {
      DatasetStep s;
      s.t = t;
      s.R = pose.R;
      s.v = v;
      s.p = p;
      s.pc = pc;
      bg += cfg.imu.gyro_bias * sq * noise.normal3(1.0);
      ba += cfg.imu.accel_bias * sq * noise.normal3(1.0);
      s.bg = bg;
      s.ba = ba;
      const Eigen::Vector3d w = lie::so3_log(R_prev.transpose() * pose.R) / dt;
      const Eigen::Vector3d a = R_prev.transpose() * ((v - v_prev) / dt - gravity);
      s.w = w + bg + (cfg.imu.gyro / sq) * noise.normal3(1.0);
      s.a = a + ba + (cfg.imu.accel / sq) * noise.normal3(1.0);
      s.qd = (q - q_prev) / dt;
      s.q = q;
      for (int j = 0; j < nq; ++j) s.q[j] += cfg.encoder * noise.normal();
      s.contact.resize(n);
      s.slip = Eigen::Matrix3Xd::Zero(3, n);
      // Load share of each leg among legs with a candidate in contact.
      std::vector<int> leg_contact(model.legs().size(), 0);
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d vc = (pc.col(i) - pc_prev.col(i)) / dt;
        const double height = pc(2, i);
        const int leg = foot_leg[model.candidates()[i].link];
        const Eigen::Vector3d slip = leg >= 0 ? leg_slip[leg] : script->body_slip(t);
        // Touching points move only with the scripted slip; a point lifting
        // off or touching down is not in contact even below 1 cm.
        const bool touching = height <= 0.01 && (vc - slip).norm() <= 1e-3;
        s.contact[i] = touching && ground_truth_contact(vc.head<2>().norm(), height);
        if (touching) s.slip.col(i) = slip;
        if (s.contact[i] && leg >= 0) leg_contact[leg] = 1;
      }
      int loaded = 0;
      for (int c : leg_contact) loaded += c;
      s.tau = Eigen::VectorXd::Zero(nq);
      for (int leg = 0; leg < static_cast<int>(model.legs().size()); ++leg) {
        const double share = loaded > 0 ? leg_contact[leg] / double(loaded) : 0.0;
        for (int jid : model.legs()[leg].joints) {
          const int qi = model.joints()[jid].q_index;
          s.tau[qi] = share * (20.0 * q[qi] + 0.5 * s.qd[qi]) + 0.05 * s.qd[qi];
        }
      }
      ds.steps.push_back(std::move(s));
    }
    R_prev = pose.R;
    v_prev = v;
    p_prev = p;
    q_prev = q;
    pc_prev = pc;
  }
  return ds;
}

FilterState EpisodeDataset::truth(int k) const {
  const DatasetStep& s = steps.at(k);
  FilterState x;
  x.R = s.R;
  x.v = s.v;
  x.p = s.p;
  x.pc = s.pc;
  x.bg = s.bg;
  x.ba = s.ba;
  return x;
}

ImuSample EpisodeDataset::imu(int k) const {
  const DatasetStep& s = steps.at(k);
  return ImuSample{s.w, s.a, dt()};
}

SensorFrame EpisodeDataset::frame(const RobotModel& model, int k) const {
  const DatasetStep& s = steps.at(k);
  return SensorFrame::make(model, s.t, s.w, s.a, s.q, s.qd, s.tau);
}

json EpisodeDataset::metadata() const {
  return json{{"format", "ccinekf-dataset"},
              {"version", 1},
              {"model", model_name},
              {"scenario", scenario},
              {"rate", rate},
              {"num_candidates", num_candidates},
              {"num_joints", num_joints},
              {"steps", steps.size()}};
}

std::string EpisodeDataset::to_jsonl() const {
  std::string out;
  for (const DatasetStep& s : steps) {
    Eigen::Quaterniond quat(s.R);
    quat.normalize();
    if (quat.w() < 0.0) quat.coeffs() *= -1.0;
    const double wxyz[4] = {quat.w(), quat.x(), quat.y(), quat.z()};
    std::string line = "{\"t\":" + format_double(s.t);
    line += ",\"gt.R\":" + vec_text(wxyz, 4);
    line += ",\"gt.v\":" + vec_text(s.v);
    line += ",\"gt.p\":" + vec_text(s.p);
    line += ",\"gt.pc\":[";
    for (int i = 0; i < s.pc.cols(); ++i) {
      line += (i ? "," : "") + vec_text(Eigen::Vector3d(s.pc.col(i)));
    }
    line += "],\"gt.bg\":" + vec_text(s.bg);
    line += ",\"gt.ba\":" + vec_text(s.ba);
    line += ",\"imu.w\":" + vec_text(s.w);
    line += ",\"imu.a\":" + vec_text(s.a);
    line += ",\"q\":" + vec_text(s.q);
    line += ",\"qd\":" + vec_text(s.qd);
    line += ",\"tau\":" + vec_text(s.tau);
    line += ",\"contact\":[";
    for (std::size_t i = 0; i < s.contact.size(); ++i) {
      line += (i ? "," : "") + std::string(s.contact[i] ? "true" : "false");
    }
    line += "],\"slip\":[";
    for (int i = 0; i < s.slip.cols(); ++i) {
      line += (i ? "," : "") + vec_text(Eigen::Vector3d(s.slip.col(i)));
    }
    line += "]}\n";
    out += line;
  }
  return out;
}

std::string dataset_metadata_path(const std::string& jsonl_path) {
  std::filesystem::path p(jsonl_path);
  if (p.extension() == ".jsonl") p.replace_extension();
  return p.string() + ".meta.json";
}

void EpisodeDataset::save(const std::string& path, const json& extra) const {
  json meta = metadata();
  if (!extra.is_null()) meta.update(extra);
  write_file_atomically(path, to_jsonl());
  write_file_atomically(dataset_metadata_path(path), meta.dump(2) + "\n");
}

EpisodeDataset EpisodeDataset::parse(const json& meta, const std::string& jsonl) {
  EpisodeDataset ds;
  try {
    if (meta.value("format", std::string()) != "ccinekf-dataset") {
      throw InputError("not a dataset metadata file");
    }
    ds.model_name = meta.value("model", std::string());
    ds.scenario = meta.value("scenario", std::string());
    ds.rate = meta.at("rate").get<double>();
    ds.num_candidates = meta.at("num_candidates").get<int>();
    ds.num_joints = meta.at("num_joints").get<int>();
    if (!(ds.rate > 0.0)) throw InputError("dataset rate must be positive");
    std::istringstream in(jsonl);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      DatasetStep s;
      s.t = j.at("t").get<double>();
      const Eigen::VectorXd quat = read_vec(j, "gt.R");
      if (quat.size() != 4) throw InputError("gt.R needs 4 values");
      s.R = Eigen::Quaterniond(quat[0], quat[1], quat[2], quat[3])
                .normalized()
                .toRotationMatrix();
      s.v = read_vec3(j, "gt.v");
      s.p = read_vec3(j, "gt.p");
      s.pc = read_points(j, "gt.pc", ds.num_candidates);
      if (j.contains("gt.bg")) s.bg = read_vec3(j, "gt.bg");
      if (j.contains("gt.ba")) s.ba = read_vec3(j, "gt.ba");
      s.w = read_vec3(j, "imu.w");
      s.a = read_vec3(j, "imu.a");
      s.q = read_vec(j, "q");
      s.qd = read_vec(j, "qd");
      s.tau = read_vec(j, "tau");
      if (s.q.size() != ds.num_joints || s.qd.size() != ds.num_joints ||
          s.tau.size() != ds.num_joints) {
        throw InputError("joint vectors have the wrong length on line " +
                         std::to_string(lineno));
      }
      for (const auto& c : j.at("contact")) s.contact.push_back(c.get<bool>());
      if (static_cast<int>(s.contact.size()) != ds.num_candidates) {
        throw InputError("contact flags have the wrong length on line " +
                         std::to_string(lineno));
      }
      s.slip = read_points(j, "slip", ds.num_candidates);
      if (!ds.steps.empty() && !(s.t > ds.steps.back().t)) {
        throw InputError("timestamps are not increasing on line " +
                         std::to_string(lineno));
      }
      ds.steps.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed dataset: ") + e.what());
  }
  return ds;
}

EpisodeDataset EpisodeDataset::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset '" + path + "'");
  std::stringstream body;
  body << in.rdbuf();
  const std::string meta_path = dataset_metadata_path(path);
  std::ifstream min(meta_path);
  if (!min) throw InputError("missing dataset metadata '" + meta_path + "'");
  json meta;
  try {
    meta = json::parse(min);
  } catch (const json::exception& e) {
    throw InputError("malformed dataset metadata: " + std::string(e.what()));
  }
  return parse(meta, body.str());
}

}  // namespace ccinekf
