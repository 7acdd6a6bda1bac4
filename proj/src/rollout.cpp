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

#include "ccinekf/rollout.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "ccinekf/errors.hpp"
#include "ccinekf/liegroup.hpp"

namespace ccinekf {

using ad::NodeId;
using ad::Tape;
using lie::skew;

namespace {

FilterState state_values(const Tape& t, const TapedState& s) {
  FilterState x;
  x.R = t.value(s.R);
  x.v = t.value(s.v);
  x.p = t.value(s.p);
  x.pc = t.value(s.pc);
  x.bg = t.value(s.bg);
  x.ba = t.value(s.ba);
  return x;
}

std::vector<Eigen::Matrix3d> split_sigma(const Eigen::MatrixXd& stacked) {
  std::vector<Eigen::Matrix3d> out;
  for (Eigen::Index c = 0; c + 3 <= stacked.cols(); c += 3) {
    out.push_back(stacked.middleCols<3>(c));
  }
  return out;
}

// Adjoints for terms of the form -R (rot) and -[x]x R (x in v, p, pc_i),
// given the adjoint blocks of those terms.
void accumulate_skew_r(Tape& t, const Eigen::Matrix3d& R,
                       const Eigen::Vector3d& x, NodeId x_node, int col,
                       const Eigen::Matrix3d& g_term, Eigen::Matrix3d& r_bar) {
  // term = [x]x R, adjoint g_term.
  r_bar += skew(x).transpose() * g_term;
  if (t.requires_grad(x_node)) {
    const Eigen::Vector3d xb = ad::skew_adjoint(g_term * R.transpose());
    if (col < 0) {
      t.accumulate(x_node, xb);
    } else {
      Eigen::MatrixXd full = Eigen::MatrixXd::Zero(3, t.value(x_node).cols());
      full.col(col) = xb;
      t.accumulate(x_node, full);
    }
  }
}

}  // namespace

TapedNet record_params(Tape& tape, const ContactNet& net) {
  TapedNet p;
  for (const auto& l : net.layers()) {
    p.weights.push_back(tape.variable(l.W));
    p.biases.push_back(tape.variable(l.b));
  }
  return p;
}

NodeId taped_mlp(Tape& tape, const ContactNet& net, const TapedNet& params,
                 NodeId features) {
  NodeId h = features;
  const std::size_t n = params.weights.size();
  for (std::size_t k = 0; k < n; ++k) {
    const NodeId W = params.weights[k];
    const NodeId b = params.biases[k];
    Eigen::MatrixXd zv = dense_affine(tape.value(W), tape.value(b).col(0), tape.value(h));
    const NodeId x = h;
    const NodeId z = tape.custom(
        {W, b, x}, std::move(zv), [W, b, x](Tape& t, const Eigen::MatrixXd& g) {
          if (t.requires_grad(W)) t.accumulate(W, g * t.value(x).transpose());
          if (t.requires_grad(b)) t.accumulate(b, g.rowwise().sum());
          if (t.requires_grad(x)) t.accumulate(x, t.value(W).transpose() * g);
        });
    if (k + 1 == n) {
      h = z;
    } else {
      h = net.arch().activation == "tanh" ? tape.tanh(z) : tape.relu(z);
    }
  }
  return h;
}

NodeId taped_contact_covariances(Tape& tape, NodeId outputs) {
  const Eigen::MatrixXd& O = tape.value(outputs);
  if (O.rows() != 6) throw InputError("network outputs must have 6 rows");
  const Eigen::Index m = O.cols();
  Eigen::MatrixXd S(3, 3 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    S.middleCols<3>(3 * i) =
        chol_to_cov(factor_from_outputs(O.col(i)));
  }
  return tape.custom({outputs}, std::move(S),
                     [outputs](Tape& t, const Eigen::MatrixXd& g) {
                       const Eigen::MatrixXd& O = t.value(outputs);
                       Eigen::MatrixXd ob(6, O.cols());
                       for (Eigen::Index i = 0; i < O.cols(); ++i) {
                         const Eigen::Matrix<double, 6, 1> o = O.col(i);
                         const Eigen::Matrix3d L = factor_from_outputs(o);
                         const Eigen::Matrix3d gs = g.middleCols<3>(3 * i);
                         const Eigen::Matrix3d lb = (gs + gs.transpose()) * L;
                         ob(0, i) = lb(0, 0) * sigmoid(o[0]);
                         ob(1, i) = lb(1, 0);
                         ob(2, i) = lb(1, 1) * sigmoid(o[2]);
                         ob(3, i) = lb(2, 0);
                         ob(4, i) = lb(2, 1);
                         ob(5, i) = lb(2, 2) * sigmoid(o[5]);
                       }
                       t.accumulate(outputs, ob);
                     });
}

TapedState taped_constant_state(Tape& tape, const FilterEstimate& est) {
  TapedState s;
  s.R = tape.constant(est.x.R);
  s.v = tape.constant(est.x.v);
  s.p = tape.constant(est.x.p);
  s.pc = tape.constant(est.x.pc);
  s.bg = tape.constant(est.x.bg);
  s.ba = tape.constant(est.x.ba);
  s.P = tape.constant(est.P);
  return s;
}

FilterEstimate taped_values(const Tape& tape, const TapedState& s) {
  return FilterEstimate{state_values(tape, s), tape.value(s.P)};
}

NodeId taped_transition(Tape& tape, const TapedState& s, const NoiseParams& np,
                        double dt) {
  const FilterState x = state_values(tape, s);
  const Eigen::MatrixXd A = error_dynamics(x, np);
  const int dim = static_cast<int>(A.rows());
  const Eigen::MatrixXd Adt = A * dt;
  Eigen::MatrixXd Phi = Eigen::MatrixXd::Identity(dim, dim) + Adt + 0.5 * Adt * Adt;
  return tape.custom(
      {s.R, s.v, s.p, s.pc}, std::move(Phi),
      [s, A, dt](Tape& t, const Eigen::MatrixXd& g) {
        const Eigen::MatrixXd Ab =
            dt * g + (0.5 * dt * dt) * (g * A.transpose() + A.transpose() * g);
        const Eigen::Matrix3d R = t.value(s.R);
        const int n = static_cast<int>(t.value(s.pc).cols());
        const TangentLayout L{n};
        const int bg = L.gyro_bias();
        const int ba = L.accel_bias();
        Eigen::Matrix3d r_bar = Eigen::Matrix3d::Zero();
        // A[rot, bg] = -R and A[vel, ba] = -R.
        r_bar -= Ab.block<3, 3>(TangentLayout::kRot, bg);
        r_bar -= Ab.block<3, 3>(TangentLayout::kVel, ba);
        // A[x, bg] = -[x]x R.
        accumulate_skew_r(t, R, t.value(s.v).col(0), s.v, -1,
                          -Ab.block<3, 3>(TangentLayout::kVel, bg), r_bar);
        accumulate_skew_r(t, R, t.value(s.p).col(0), s.p, -1,
                          -Ab.block<3, 3>(TangentLayout::kPos, bg), r_bar);
        for (int i = 0; i < n; ++i) {
          accumulate_skew_r(t, R, t.value(s.pc).col(i), s.pc, i,
                            -Ab.block<3, 3>(L.contact(i), bg), r_bar);
        }
        t.accumulate(s.R, r_bar);
      });
}

NodeId taped_process_noise(Tape& tape, const TapedState& s, NodeId sigma,
                           const NoiseParams& np) {
  const FilterState x = state_values(tape, s);
  const std::vector<Eigen::Matrix3d> sig = split_sigma(tape.value(sigma));
  Eigen::MatrixXd Q = process_noise(x, sig, np);
  const double g2 = np.gyro * np.gyro;
  return tape.custom(
      {s.R, s.v, s.p, s.pc, sigma}, std::move(Q),
      [s, sigma, g2](Tape& t, const Eigen::MatrixXd& g) {
        const Eigen::Matrix3d R = t.value(s.R);
        const Eigen::MatrixXd& pc = t.value(s.pc);
        const int n = static_cast<int>(pc.cols());
        const TangentLayout L{n};
        const int gd = L.group_dim();
        Eigen::MatrixXd Gw(gd, 3);
        Gw.block<3, 3>(TangentLayout::kRot, 0) = R;
        Gw.block<3, 3>(TangentLayout::kVel, 0) = skew(t.value(s.v).col(0)) * R;
        Gw.block<3, 3>(TangentLayout::kPos, 0) = skew(t.value(s.p).col(0)) * R;
        for (int i = 0; i < n; ++i) {
          Gw.block<3, 3>(L.contact(i), 0) = skew(pc.col(i)) * R;
        }
        const Eigen::MatrixXd gtl = g.topLeftCorner(gd, gd);
        const Eigen::MatrixXd gw_bar = g2 * (gtl + gtl.transpose()) * Gw;
        Eigen::Matrix3d r_bar = gw_bar.block<3, 3>(TangentLayout::kRot, 0);
        accumulate_skew_r(t, R, t.value(s.v).col(0), s.v, -1,
                          gw_bar.block<3, 3>(TangentLayout::kVel, 0), r_bar);
        accumulate_skew_r(t, R, t.value(s.p).col(0), s.p, -1,
                          gw_bar.block<3, 3>(TangentLayout::kPos, 0), r_bar);
        for (int i = 0; i < n; ++i) {
          accumulate_skew_r(t, R, pc.col(i), s.pc, i,
                            gw_bar.block<3, 3>(L.contact(i), 0), r_bar);
        }
        const Eigen::MatrixXd& S = t.value(sigma);
        Eigen::MatrixXd s_bar(3, 3 * n);
        for (int i = 0; i < n; ++i) {
          const Eigen::Matrix3d gi = g.block<3, 3>(L.contact(i), L.contact(i));
          const Eigen::Matrix3d Si = S.middleCols<3>(3 * i);
          s_bar.middleCols<3>(3 * i) = R.transpose() * gi * R;
          r_bar += gi * R * Si.transpose() + gi.transpose() * R * Si;
        }
        t.accumulate(s.R, r_bar);
        t.accumulate(sigma, s_bar);
      });
}

TapedState taped_predict(Tape& tape, const TapedState& s, const ImuSample& u,
                         NodeId sigma, const NoiseParams& np) {
  if (!(u.dt > 0.0)) throw InputError("IMU sample dt must be positive");
  check_contact_covariances(split_sigma(tape.value(sigma)));
  const double dt = u.dt;
  const NodeId Phi = taped_transition(tape, s, np, dt);
  const NodeId Q = taped_process_noise(tape, s, sigma, np);
  const NodeId M = tape.add(s.P, tape.scale(Q, dt));

  TapedState out = s;
  const NodeId w = tape.sub(tape.constant(u.w), s.bg);
  out.R = tape.matmul(s.R, tape.so3_exp(tape.scale(w, dt)));
  const NodeId a = tape.sub(tape.constant(u.a), s.ba);
  const NodeId acc = tape.add(tape.matmul(s.R, a), tape.constant(np.gravity));
  out.v = tape.add(s.v, tape.scale(acc, dt));
  out.p = tape.add(tape.add(s.p, tape.scale(s.v, dt)),
                   tape.scale(tape.scale(tape.scale(acc, 0.5), dt), dt));
  out.P = tape.sym(tape.quad(Phi, M));
  covariance_health::record(tape.value(out.P), "taped predict");
  return out;
}

TapedState taped_correct(Tape& tape, const TapedState& s, const Eigen::VectorXd& q,
                         const RobotModel& model, const NoiseParams& np) {
  const int n = static_cast<int>(tape.value(s.pc).cols());
  if (model.num_candidates() != n) {
    throw InputError("state and model disagree on the candidate count");
  }
  const TangentLayout L{n};
  const int dim = L.dim();
  Eigen::Matrix3Xd h(3, n);
  Eigen::MatrixXd J(3 * n, model.num_joints());
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(3 * n, dim);
  for (int i = 0; i < n; ++i) {
    h.col(i) = forward_kinematics(model, q, i);
    J.middleRows(3 * i, 3) = point_jacobian(model, q, i);
    H.block<3, 3>(3 * i, TangentLayout::kPos) = -Eigen::Matrix3d::Identity();
    H.block<3, 3>(3 * i, L.contact(i)).setIdentity();
  }

  // Innovation z_i = R h_i - (pc_i - p).
  const Eigen::Matrix3d R0 = tape.value(s.R);
  const Eigen::Vector3d p0 = tape.value(s.p);
  const Eigen::MatrixXd& pc0 = tape.value(s.pc);
  Eigen::MatrixXd zv(3 * n, 1);
  for (int i = 0; i < n; ++i) {
    zv.block<3, 1>(3 * i, 0) = R0 * h.col(i) - (pc0.col(i) - p0);
  }
  const NodeId z = tape.custom(
      {s.R, s.p, s.pc}, std::move(zv), [s, h, n](Tape& t, const Eigen::MatrixXd& g) {
        const Eigen::Map<const Eigen::MatrixXd> G(g.data(), 3, n);
        t.accumulate(s.R, G * h.transpose());
        if (t.requires_grad(s.pc)) t.accumulate(s.pc, -G);
        if (t.requires_grad(s.p)) t.accumulate(s.p, G.rowwise().sum());
      });

  // N = sigma_q^2 (R J)(R J)^T with the candidates' Jacobians stacked.
  const double q2 = np.encoder * np.encoder;
  Eigen::MatrixXd RJ(3 * n, model.num_joints());
  for (int i = 0; i < n; ++i) RJ.middleRows(3 * i, 3) = R0 * J.middleRows(3 * i, 3);
  Eigen::MatrixXd Nv = q2 * RJ * RJ.transpose();
  const NodeId N = tape.custom(
      {s.R}, std::move(Nv), [s, J, n, q2](Tape& t, const Eigen::MatrixXd& g) {
        const Eigen::Matrix3d R = t.value(s.R);
        Eigen::MatrixXd RJ(3 * n, J.cols());
        for (int i = 0; i < n; ++i) RJ.middleRows(3 * i, 3) = R * J.middleRows(3 * i, 3);
        const Eigen::MatrixXd rj_bar = q2 * (g + g.transpose()) * RJ;
        Eigen::Matrix3d r_bar = Eigen::Matrix3d::Zero();
        for (int i = 0; i < n; ++i) {
          r_bar += rj_bar.middleRows(3 * i, 3) * J.middleRows(3 * i, 3).transpose();
        }
        t.accumulate(s.R, r_bar);
      });

  const NodeId Hn = tape.constant(H);
  const NodeId HP = tape.matmul(Hn, s.P);
  NodeId S = tape.sym(tape.add(tape.matmul(HP, tape.transpose(Hn)), N));
  S = tape.add(S, tape.constant(1e-12 * Eigen::MatrixXd::Identity(3 * n, 3 * n)));
  NodeId X;
  try {
    X = tape.spd_solve(S, HP);
  } catch (const SingularUpdateError&) {
    throw SingularUpdateError("innovation covariance is not positive definite");
  }
  const NodeId K = tape.transpose(X);
  const NodeId delta = tape.matmul(K, z);

  TapedState out = s;
  const NodeId dtheta = tape.block(delta, 0, 0, 3, 1);
  const NodeId E = tape.so3_exp(dtheta);
  out.R = tape.matmul(E, s.R);
  out.v = tape.add(tape.matmul(E, s.v),
                   tape.so3_jl_apply(dtheta, tape.block(delta, 3, 0, 3, 1)));
  out.p = tape.add(tape.matmul(E, s.p),
                   tape.so3_jl_apply(dtheta, tape.block(delta, 6, 0, 3, 1)));
  out.pc = tape.add(
      tape.matmul(E, s.pc),
      tape.so3_jl_apply(dtheta,
                        tape.reshape(tape.block(delta, 9, 0, 3 * n, 1), 3, n)));
  out.bg = tape.add(s.bg, tape.block(delta, L.gyro_bias(), 0, 3, 1));
  out.ba = tape.add(s.ba, tape.block(delta, L.accel_bias(), 0, 3, 1));

  const NodeId IKH = tape.sub(tape.constant(Eigen::MatrixXd::Identity(dim, dim)),
                              tape.matmul(K, Hn));
  out.P = tape.sym(tape.add(tape.quad(IKH, s.P), tape.quad(K, N)));
  covariance_health::record(tape.value(out.P), "taped correct");
  return out;
}

Rollout rollout_loss(const ContactNet& net, const FilterEstimate& initial,
                     std::span<const BufferStep> steps, const RobotModel& model,
                     const NoiseParams& np, const RolloutOptions& options) {
  if (steps.empty()) throw InputError("rollout buffer is empty");
  const int n = model.num_candidates();
  const int len = static_cast<int>(steps.size());
  Rollout r;
  Tape& t = r.tape;
  r.params = record_params(t, net);

  // The network does not see the filter state, so the whole buffer goes
  // through it as one batch: column k * N + i is step k, candidate i.
  Eigen::MatrixXd X(net.arch().input_dim, static_cast<Eigen::Index>(n) * len);
  for (int k = 0; k < len; ++k) {
    if (steps[k].features.rows() != X.rows() || steps[k].features.cols() != n) {
      throw InputError("buffer features do not match the network");
    }
    X.middleCols(static_cast<Eigen::Index>(k) * n, n) = steps[k].features;
  }
  NodeId sigma_all = taped_contact_covariances(
      t, taped_mlp(t, net, r.params, t.constant(std::move(X))));
  if (options.sigma_scale != 1.0) sigma_all = t.scale(sigma_all, options.sigma_scale);

  TapedState s = taped_constant_state(t, initial);
  std::vector<NodeId> terms;
  terms.reserve(len);
  for (int k = 0; k < len; ++k) {
    const BufferStep& st = steps[k];
    const NodeId sigma = t.block(sigma_all, 0, 3 * n * k, 3, 3 * n);
    s = taped_predict(t, s, st.imu, sigma, np);
    s = taped_correct(t, s, st.q, model, np);
    const NodeId vb = t.matmul(t.transpose(s.R), s.v);
    const Eigen::Vector3d target = st.R_gt.transpose() * st.v_gt;
    const NodeId term = t.squared_norm(t.sub(t.constant(target), vb));
    const double value = t.value(term)(0, 0);
    if (!std::isfinite(value) || !t.value(s.P).allFinite()) {
      throw DivergedRolloutError(
          "rollout diverged at buffer step " + std::to_string(k), k);
    }
    r.step_losses.push_back(value);
    terms.push_back(term);
  }
  r.loss = t.scale(t.sum(terms), options.loss_scale / static_cast<double>(len));
  r.loss_value = t.value(r.loss)(0, 0);
  if (!std::isfinite(r.loss_value)) {
    throw DivergedRolloutError("rollout loss is not finite", len - 1);
  }
  r.final = taped_values(t, s);
  return r;
}

GradientSet GradientSet::zeros_like(const ContactNet& net) {
  GradientSet g;
  for (const auto& l : net.layers()) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                        Eigen::VectorXd::Zero(l.b.size())});
  }
  return g;
}

Eigen::VectorXd GradientSet::flatten() const {
  Eigen::Index total = 0;
  for (const auto& l : layers) total += l.W.size() + l.b.size();
  Eigen::VectorXd out(total);
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) out[k++] = l.W(r, c);
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) out[k++] = l.b[r];
  }
  return out;
}

double GradientSet::norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.W.squaredNorm() + l.b.squaredNorm();
  return std::sqrt(s);
}

void GradientSet::add(const GradientSet& other) {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    layers[k].W += other.layers[k].W;
    layers[k].b += other.layers[k].b;
  }
}

void GradientSet::scale(double s) {
  for (auto& l : layers) {
    l.W *= s;
    l.b *= s;
  }
}

bool GradientSet::all_finite() const {
  for (const auto& l : layers) {
    if (!l.W.allFinite() || !l.b.allFinite()) return false;
  }
  return true;
}

GradientSet backward(Rollout& rollout) {
  Tape& t = rollout.tape;
  t.backward(rollout.loss);
  GradientSet g;
  for (std::size_t k = 0; k < rollout.params.weights.size(); ++k) {
    const NodeId w = rollout.params.weights[k];
    const NodeId b = rollout.params.biases[k];
    DenseLayer l;
    l.W = t.adjoint(w).size() ? t.adjoint(w)
                              : Eigen::MatrixXd::Zero(t.value(w).rows(),
                                                      t.value(w).cols());
    l.b = t.adjoint(b).size() ? Eigen::VectorXd(t.adjoint(b).col(0))
                              : Eigen::VectorXd::Zero(t.value(b).rows());
    g.layers.push_back(std::move(l));
  }
  return g;
}

double replay_loss(const ContactNet& net, const FilterEstimate& initial,
                   std::span<const BufferStep> steps, const RobotModel& model,
                   const NoiseParams& np, const RolloutOptions& options,
                   FilterEstimate* final) {
  FilterEstimate est = initial;
  double total = 0.0;
  for (const BufferStep& st : steps) {
    std::vector<Eigen::Matrix3d> sigma = net.factors(st.features);
    for (auto& S : sigma) {
      S = chol_to_cov(S);
      if (options.sigma_scale != 1.0) S = options.sigma_scale * S;
    }
    est = filter_step(est.x, est.P, st.imu, st.q, sigma, model, np);
    const Eigen::Vector3d e =
        st.R_gt.transpose() * st.v_gt - est.x.R.transpose() * est.x.v;
    total += e.squaredNorm();
  }
  if (final) *final = est;
  return total * (options.loss_scale / static_cast<double>(steps.size()));
}

}  // namespace ccinekf
