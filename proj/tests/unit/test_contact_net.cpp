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

#include <cmath>

#include <Eigen/Dense>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "ccinekf/contact_net.hpp"
#include "ccinekf/errors.hpp"
#include "ccinekf/rng.hpp"

namespace ccinekf {
namespace {

SensorFrame random_frame(const RobotModel& m, Rng& rng, double t) {
  Eigen::VectorXd q(m.num_joints()), qd(m.num_joints()), tau(m.num_joints());
  for (int k = 0; k < m.num_joints(); ++k) {
    q[k] = rng.normal() * 0.3;
    qd[k] = rng.normal();
    tau[k] = rng.normal() * 5.0;
  }
  return SensorFrame::make(m, t, rng.normal3(1.0), rng.normal3(3.0), q, qd, tau);
}

TEST(NormalizeChannels, ConstantChannelIsZero) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(2, 20, 3.7);
  EXPECT_EQ(normalize_channels(x), Eigen::MatrixXd::Zero(2, 20));
}

TEST(NormalizeChannels, AlternatingChannel) {
  Eigen::MatrixXd x(1, 20);
  for (int t = 0; t < 20; ++t) x(0, t) = t % 2 ? 1.0 : -1.0;
  const Eigen::MatrixXd y = normalize_channels(x);
  // std is exactly 1, so the epsilon leaves 1 / (1 + 1e-6).
  for (int t = 0; t < 20; ++t) {
    EXPECT_NEAR(std::abs(y(0, t)), 1.0, 1e-6);
    EXPECT_DOUBLE_EQ(std::abs(y(0, t)), 1.0 / (1.0 + 1e-6));
  }
}

TEST(NormalizeChannels, RandomWindowStatistics) {
  Rng rng(51);
  Eigen::MatrixXd x(30, 20);
  for (int r = 0; r < 30; ++r)
    for (int t = 0; t < 20; ++t) x(r, t) = 5.0 + 2.0 * rng.normal();
  const Eigen::MatrixXd y = normalize_channels(x);
  for (int r = 0; r < 30; ++r) {
    const double mean = y.row(r).mean();
    const double sd = std::sqrt((y.row(r).array() - mean).square().mean());
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_GE(sd, 1.0 - 1e-3);
    EXPECT_LE(sd, 1.0);
  }
}

TEST(HistoryWindow, PadsWithFirstFrame) {
  const RobotModel m = RobotModel::desk_biped();
  Rng rng(52);
  HistoryWindow w(4);
  const SensorFrame f0 = random_frame(m, rng, 0.0);
  const SensorFrame f1 = random_frame(m, rng, 0.1);
  w.push(f0);
  w.push(f1);
  EXPECT_FALSE(w.warm());
  EXPECT_EQ(w.at(0).t, 0.0);
  EXPECT_EQ(w.at(1).t, 0.0);
  EXPECT_EQ(w.at(2).t, 0.0);
  EXPECT_EQ(w.at(3).t, 0.1);
  for (int k = 0; k < 4; ++k) w.push(random_frame(m, rng, 1.0 + k));
  EXPECT_TRUE(w.warm());
  EXPECT_EQ(w.at(0).t, 1.0);
  EXPECT_EQ(w.at(3).t, 4.0);
}

TEST(SensorFrame, CandidateChannelsFromKinematics) {
  const RobotModel m = RobotModel::desk_biped();
  Rng rng(53);
  const SensorFrame f = random_frame(m, rng, 0.0);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(f.cand_p.col(i), forward_kinematics(m, f.q, i));
    EXPECT_LT((f.cand_v.col(i) - point_jacobian(m, f.q, i) * f.qd).norm(), 1e-15);
  }
}

TEST(Features, LayoutIsChannelMajorAndChainSliced) {
  const RobotModel m = RobotModel::desk_biped();
  const FeatureLayout layout = FeatureLayout::from_model(m, 5);
  EXPECT_EQ(layout.chain_width, 6);
  EXPECT_EQ(layout.channels(), 30);
  EXPECT_EQ(layout.input_dim(), 150);
  Rng rng(54);
  HistoryWindow w(5);
  for (int k = 0; k < 5; ++k) w.push(random_frame(m, rng, k));
  const Eigen::MatrixXd X = history_features(layout, w);
  ASSERT_EQ(X.rows(), 150);
  ASSERT_EQ(X.cols(), 4);
  for (int i = 0; i < 4; ++i) {
    const Eigen::MatrixXd norm = normalize_channels(candidate_channels(layout, w, i));
    for (int c = 0; c < 30; ++c)
      for (int t = 0; t < 5; ++t) EXPECT_EQ(X(c * 5 + t, i), norm(c, t));
  }
  // Left-foot candidates see the left-leg knee angle (q index 3).
  const Eigen::MatrixXd raw = candidate_channels(layout, w, 0);
  EXPECT_EQ(raw(6 + 3, 2), w.at(2).q[3]);
  const Eigen::MatrixXd raw_r = candidate_channels(layout, w, 2);
  EXPECT_EQ(raw_r(6 + 3, 2), w.at(2).q[9]);
}

ContactNetArch small_arch() {
  ContactNetArch a;
  a.input_dim = 10;
  a.hidden = {7, 5};
  a.num_candidates = 3;
  a.history = 2;
  return a;
}

TEST(ContactNet, ZeroParametersGiveLnTwoDiagonal) {
  const ContactNet net = ContactNet::zeros(small_arch());
  Rng rng(55);
  Eigen::MatrixXd X(10, 3);
  for (int k = 0; k < X.size(); ++k) X.data()[k] = rng.normal();
  for (const auto& L : net.factors(X)) {
    EXPECT_DOUBLE_EQ(L(0, 0), std::log(2.0));
    EXPECT_DOUBLE_EQ(L(1, 1), std::log(2.0));
    EXPECT_DOUBLE_EQ(L(2, 2), std::log(2.0));
    EXPECT_EQ(L(1, 0), 0.0);
    EXPECT_EQ(L(2, 0), 0.0);
    EXPECT_EQ(L(2, 1), 0.0);
    EXPECT_EQ(L(0, 1), 0.0);
  }
}

TEST(ContactNet, PermutingCandidatesPermutesOutputs) {
  const ContactNet net = ContactNet::initialize(small_arch(), 3);
  Rng rng(56);
  Eigen::MatrixXd X(10, 3);
  for (int k = 0; k < X.size(); ++k) X.data()[k] = rng.normal();
  Eigen::MatrixXd Xp = X;
  Xp.col(0).swap(Xp.col(2));
  const auto a = net.factors(X);
  const auto b = net.factors(Xp);
  EXPECT_EQ(a[0], b[2]);
  EXPECT_EQ(a[2], b[0]);
  EXPECT_EQ(a[1], b[1]);
}

TEST(ContactNet, FactorLayoutAndSoftplus) {
  Eigen::Matrix<double, 6, 1> o;
  o << 0.5, -1.0, -30.0, 2.0, 3.0, 40.0;
  const Eigen::Matrix3d L = factor_from_outputs(o);
  EXPECT_DOUBLE_EQ(L(0, 0), std::log1p(std::exp(0.5)));
  EXPECT_EQ(L(1, 0), -1.0);
  EXPECT_GT(L(1, 1), 0.0);
  EXPECT_NEAR(L(1, 1), std::exp(-30.0), 1e-25);
  EXPECT_EQ(L(2, 0), 2.0);
  EXPECT_EQ(L(2, 1), 3.0);
  EXPECT_DOUBLE_EQ(L(2, 2), 40.0);
  EXPECT_EQ(L(0, 1), 0.0);
}

TEST(ContactNet, HeUniformInitialization) {
  ContactNetArch a = small_arch();
  a.input_dim = 400;
  a.hidden = {300, 50};
  const ContactNet net = ContactNet::initialize(a, 9);
  const Eigen::MatrixXd& W = net.layers()[0].W;
  const double limit = std::sqrt(6.0 / 400.0);
  EXPECT_LE(W.cwiseAbs().maxCoeff(), limit);
  EXPECT_NEAR(W.array().square().mean(), limit * limit / 3.0, 0.02 * limit * limit);
  EXPECT_EQ(net.layers()[0].b, Eigen::VectorXd::Zero(300));
}

TEST(CholToCov, Examples) {
  EXPECT_EQ(chol_to_cov(Eigen::Matrix3d::Identity()),
            (1.0 + 1e-8) * Eigen::Matrix3d::Identity());
  EXPECT_EQ(chol_to_cov(Eigen::Matrix3d::Zero()), 1e-8 * Eigen::Matrix3d::Identity());
  Rng rng(57);
  for (int k = 0; k < 1000; ++k) {
    Eigen::Matrix<double, 6, 1> o;
    for (int j = 0; j < 6; ++j) o[j] = 3.0 * rng.normal();
    const Eigen::Matrix3d S = chol_to_cov(factor_from_outputs(o));
    EXPECT_EQ(S, S.transpose());
    const double lo = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(S)
                          .eigenvalues()
                          .minCoeff();
    EXPECT_GE(lo, 1e-8 - 1e-12);
  }
}

TEST(ContactNet, CheckpointRoundTripIsExact) {
  const ContactNet net = ContactNet::initialize(small_arch(), 4);
  const ContactNet back = ContactNet::from_json(
      nlohmann::json::parse(net.to_json().dump()));
  EXPECT_EQ(back.flatten(), net.flatten());
  EXPECT_EQ(back.arch().hidden, net.arch().hidden);
}

TEST(ContactNet, RefusesLayoutVersionMismatch) {
  nlohmann::json j = ContactNet::zeros(small_arch()).to_json();
  j["architecture"]["feature_layout_version"] = kFeatureLayoutVersion + 1;
  EXPECT_THROW(ContactNet::from_json(j), InputError);
}

TEST(ContactNet, FlattenIsRowMajorPerLayer) {
  ContactNet net = ContactNet::initialize(small_arch(), 5);
  const Eigen::VectorXd theta = net.flatten();
  EXPECT_EQ(theta.size(), net.num_params());
  EXPECT_EQ(net.num_params(), 10 * 7 + 7 + 7 * 5 + 5 + 5 * 6 + 6);
  EXPECT_EQ(theta[1], net.layers()[0].W(0, 1));
  EXPECT_EQ(theta[70], net.layers()[0].b[0]);
  ContactNet other = ContactNet::zeros(small_arch());
  other.unflatten(theta);
  EXPECT_EQ(other.flatten(), theta);
}

}  // namespace
}  // namespace ccinekf
