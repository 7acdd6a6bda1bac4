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

#include "ccinekf/contact_net.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ccinekf/errors.hpp"
#include "ccinekf/rng.hpp"

namespace ccinekf {

using nlohmann::json;

SensorFrame SensorFrame::make(const RobotModel& model, double t,
                              const Eigen::Vector3d& w,
                              const Eigen::Vector3d& a,
                              const Eigen::VectorXd& q,
                              const Eigen::VectorXd& qd,
                              const Eigen::VectorXd& tau) {
  SensorFrame f;
  f.t = t;
  f.w = w;
  f.a = a;
  f.q = q;
  f.qd = qd;
  f.tau = tau;
  const int n = model.num_candidates();
  f.cand_p.resize(3, n);
  f.cand_v.resize(3, n);
  for (int i = 0; i < n; ++i) {
    f.cand_p.col(i) = forward_kinematics(model, q, i);
    f.cand_v.col(i) = point_jacobian(model, q, i) * qd;
  }
  return f;
}

FeatureLayout FeatureLayout::from_model(const RobotModel& model, int history) {
  if (history < 1) throw ConfigurationError("history length must be >= 1");
  FeatureLayout layout;
  layout.history = history;
  for (const auto& c : model.candidates()) {
    layout.chain_joints.push_back(model.chain_q_indices(c.link));
    layout.chain_width = std::max(
        layout.chain_width, static_cast<int>(layout.chain_joints.back().size()));
  }
  return layout;
}

void HistoryWindow::push(const SensorFrame& frame) {
  frames_.push_back(frame);
  while (static_cast<int>(frames_.size()) > history_) frames_.pop_front();
}

const SensorFrame& HistoryWindow::at(int k) const {
  if (frames_.empty()) throw InputError("history window is empty");
  const int pad = history_ - static_cast<int>(frames_.size());
  return k < pad ? frames_.front() : frames_[k - pad];
}

Eigen::MatrixXd normalize_channels(const Eigen::MatrixXd& x) {
  const double n = static_cast<double>(x.cols());
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    // Constant rows map to exact zeros; the mean of repeated values can
    // differ from the value in the last bit.
    if (x.row(r).maxCoeff() == x.row(r).minCoeff()) {
      out.row(r).setZero();
      continue;
    }
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    out.row(r) = (x.row(r).array() - mean) / (std::sqrt(var) + 1e-6);
  }
  return out;
}

Eigen::MatrixXd candidate_channels(const FeatureLayout& layout,
                                   const HistoryWindow& window, int candidate) {
  const int H = layout.history;
  const int cw = layout.chain_width;
  const std::vector<int>& joints = layout.chain_joints.at(candidate);
  Eigen::MatrixXd ch = Eigen::MatrixXd::Zero(layout.channels(), H);
  for (int t = 0; t < H; ++t) {
    const SensorFrame& f = window.at(t);
    ch.block<3, 1>(0, t) = f.w;
    ch.block<3, 1>(3, t) = f.a;
    for (std::size_t j = 0; j < joints.size(); ++j) {
      ch(6 + j, t) = f.q[joints[j]];
      ch(6 + cw + j, t) = f.qd[joints[j]];
      ch(6 + 2 * cw + j, t) = f.tau[joints[j]];
    }
    ch.block<3, 1>(6 + 3 * cw, t) = f.cand_p.col(candidate);
    ch.block<3, 1>(9 + 3 * cw, t) = f.cand_v.col(candidate);
  }
  return ch;
}

Eigen::MatrixXd history_features(const FeatureLayout& layout,
                                 const HistoryWindow& window) {
  if (window.history() != layout.history) {
    throw InputError("history window length does not match the feature layout");
  }
  const int n = layout.num_candidates();
  Eigen::MatrixXd X(layout.input_dim(), n);
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd norm =
        normalize_channels(candidate_channels(layout, window, i));
    // Channel-major flattening: index c * H + t.
    const Eigen::MatrixXd rowmajor = norm.transpose();
    X.col(i) = Eigen::Map<const Eigen::VectorXd>(rowmajor.data(), rowmajor.size());
  }
  return X;
}

ContactNetArch ContactNetArch::for_layout(const FeatureLayout& layout,
                                          std::vector<int> hidden) {
  ContactNetArch a;
  a.input_dim = layout.input_dim();
  a.hidden = std::move(hidden);
  a.history = layout.history;
  a.num_candidates = layout.num_candidates();
  a.chain_width = layout.chain_width;
  return a;
}

namespace {

std::vector<int> layer_dims(const ContactNetArch& arch) {
  std::vector<int> dims{arch.input_dim};
  dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
  dims.push_back(6);
  return dims;
}

void check_arch(const ContactNetArch& arch) {
  if (arch.input_dim < 1) throw ConfigurationError("input_dim must be >= 1");
  for (int h : arch.hidden) {
    if (h < 1) throw ConfigurationError("hidden sizes must be >= 1");
  }
  if (arch.activation != "relu" && arch.activation != "tanh") {
    throw ConfigurationError("unknown activation '" + arch.activation + "'");
  }
}

Eigen::MatrixXd activate(const std::string& kind, const Eigen::MatrixXd& x) {
  if (kind == "tanh") return x.array().tanh().matrix();
  return x.cwiseMax(0.0);
}

}  // namespace

ContactNet ContactNet::zeros(const ContactNetArch& arch) {
  check_arch(arch);
  ContactNet net;
  net.arch_ = arch;
  const std::vector<int> dims = layer_dims(arch);
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    net.layers_.push_back({Eigen::MatrixXd::Zero(dims[k + 1], dims[k]),
                           Eigen::VectorXd::Zero(dims[k + 1])});
  }
  return net;
}

ContactNet ContactNet::initialize(const ContactNetArch& arch,
                                  std::uint64_t seed) {
  ContactNet net = zeros(arch);
  Rng rng(seed);
  for (auto& layer : net.layers_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.W.cols()));
    for (Eigen::Index r = 0; r < layer.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.W.cols(); ++c) {
        layer.W(r, c) = rng.uniform(-limit, limit);
      }
    }
  }
  return net;
}

int ContactNet::num_params() const {
  int n = 0;
  for (const auto& l : layers_) n += static_cast<int>(l.W.size() + l.b.size());
  return n;
}

Eigen::VectorXd ContactNet::flatten() const {
  Eigen::VectorXd theta(num_params());
  int k = 0;
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) theta[k++] = l.W(r, c);
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) theta[k++] = l.b[r];
  }
  return theta;
}

void ContactNet::unflatten(const Eigen::VectorXd& theta) {
  if (theta.size() != num_params()) {
    throw InputError("parameter vector has the wrong length");
  }
  int k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = theta[k++];
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = theta[k++];
  }
}

Eigen::MatrixXd ContactNet::outputs(const Eigen::MatrixXd& features) const {
  if (features.rows() != arch_.input_dim) {
    throw InputError("feature dimension does not match the network");
  }
  Eigen::MatrixXd h = features;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Eigen::MatrixXd z = dense_affine(layers_[k].W, layers_[k].b, h);
    h = (k + 1 < layers_.size()) ? activate(arch_.activation, z) : z;
  }
  return h;
}

std::vector<Eigen::Matrix3d> ContactNet::factors(
    const Eigen::MatrixXd& features) const {
  const Eigen::MatrixXd out = outputs(features);
  std::vector<Eigen::Matrix3d> Ls;
  Ls.reserve(out.cols());
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    Ls.push_back(factor_from_outputs(out.col(i)));
  }
  return Ls;
}

Eigen::MatrixXd dense_affine(const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                             const Eigen::MatrixXd& X) {
  Eigen::MatrixXd z(W.rows(), X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    z.col(c).noalias() = W * X.col(c);
    z.col(c) += b;
  }
  return z;
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::Matrix3d factor_from_outputs(const Eigen::Matrix<double, 6, 1>& o) {
  Eigen::Matrix3d L = Eigen::Matrix3d::Zero();
  L(0, 0) = softplus(o[0]);
  L(1, 0) = o[1];
  L(1, 1) = softplus(o[2]);
  L(2, 0) = o[3];
  L(2, 1) = o[4];
  L(2, 2) = softplus(o[5]);
  return L;
}

Eigen::Matrix3d chol_to_cov(const Eigen::Matrix3d& L) {
  Eigen::Matrix3d S = L * L.transpose();
  S = 0.5 * (S + S.transpose()).eval();
  S.diagonal().array() += 1e-8;
  return S;
}

std::vector<Eigen::Matrix3d> forward(const ContactNet& net,
                                     const FeatureLayout& layout,
                                     const HistoryWindow& window) {
  return net.factors(history_features(layout, window));
}

std::vector<Eigen::Matrix3d> contact_covariances(const ContactNet& net,
                                                 const FeatureLayout& layout,
                                                 const HistoryWindow& window) {
  std::vector<Eigen::Matrix3d> out = forward(net, layout, window);
  for (auto& L : out) L = chol_to_cov(L);
  return out;
}

json ContactNet::to_json() const {
  json arch{{"input_dim", arch_.input_dim},
            {"hidden", arch_.hidden},
            {"output_dim", 6},
            {"history", arch_.history},
            {"num_candidates", arch_.num_candidates},
            {"chain_width", arch_.chain_width},
            {"activation", arch_.activation},
            {"feature_layout_version", arch_.layout_version}};
  json layers = json::array();
  for (const auto& l : layers_) {
    std::vector<double> w;
    w.reserve(l.W.size());
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) w.push_back(l.W(r, c));
    }
    layers.push_back({{"rows", l.W.rows()},
                      {"cols", l.W.cols()},
                      {"weights", w},
                      {"bias", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}});
  }
  return {{"format", "ccinekf-contactnet"}, {"architecture", arch}, {"layers", layers}};
}

ContactNet ContactNet::from_json(const json& j) {
  try {
    const json& a = j.at("architecture");
    const int version = a.at("feature_layout_version").get<int>();
    if (version != kFeatureLayoutVersion) {
      throw InputError("checkpoint feature layout version " +
                       std::to_string(version) + " does not match " +
                       std::to_string(kFeatureLayoutVersion));
    }
    ContactNetArch arch;
    arch.input_dim = a.at("input_dim").get<int>();
    arch.hidden = a.at("hidden").get<std::vector<int>>();
    arch.history = a.at("history").get<int>();
    arch.num_candidates = a.at("num_candidates").get<int>();
    arch.chain_width = a.value("chain_width", 0);
    arch.activation = a.value("activation", std::string("relu"));
    if (a.value("output_dim", 6) != 6) throw InputError("output_dim must be 6");
    ContactNet net = zeros(arch);
    const json& layers = j.at("layers");
    if (layers.size() != net.layers_.size()) {
      throw InputError("checkpoint layer count does not match architecture");
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
      DenseLayer& l = net.layers_[k];
      const auto w = layers[k].at("weights").get<std::vector<double>>();
      const auto b = layers[k].at("bias").get<std::vector<double>>();
      if (layers[k].at("rows").get<Eigen::Index>() != l.W.rows() ||
          layers[k].at("cols").get<Eigen::Index>() != l.W.cols() ||
          static_cast<Eigen::Index>(w.size()) != l.W.size() ||
          static_cast<Eigen::Index>(b.size()) != l.b.size()) {
        throw InputError("checkpoint layer shape mismatch");
      }
      for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) {
          l.W(r, c) = w[r * l.W.cols() + c];
        }
      }
      l.b = Eigen::Map<const Eigen::VectorXd>(b.data(), l.b.size());
    }
    return net;
  } catch (const json::exception& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  }
}

void ContactNet::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint '" + path + "'");
  out << to_json().dump() << '\n';
}

ContactNet ContactNet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("checkpoint '" + path + "': " + e.what());
  }
  return from_json(j);
}

}  // namespace ccinekf
