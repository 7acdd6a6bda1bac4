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

#include "ccinekf/tape.hpp"

#include <atomic>
#include <string>

#include <Eigen/Dense>

#include "ccinekf/errors.hpp"
#include "ccinekf/liegroup.hpp"

namespace ccinekf::ad {

namespace {

std::atomic<std::int64_t> g_live_nodes{0};

}  // namespace

Eigen::Vector3d skew_adjoint(const Eigen::Matrix3d& s) {
  return Eigen::Vector3d(s(2, 1) - s(1, 2), s(0, 2) - s(2, 0), s(1, 0) - s(0, 1));
}

Tape::~Tape() { g_live_nodes -= static_cast<std::int64_t>(nodes_.size()); }

Tape::Tape(Tape&& other) noexcept : nodes_(std::move(other.nodes_)) {
  other.nodes_.clear();
}

Tape& Tape::operator=(Tape&& other) noexcept {
  if (this != &other) {
    g_live_nodes -= static_cast<std::int64_t>(nodes_.size());
    nodes_ = std::move(other.nodes_);
    other.nodes_.clear();
  }
  return *this;
}

void Tape::clear() {
  g_live_nodes -= static_cast<std::int64_t>(nodes_.size());
  nodes_.clear();
  nodes_.shrink_to_fit();
}

std::int64_t Tape::live_nodes() { return g_live_nodes.load(); }

NodeId Tape::push(Eigen::MatrixXd value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  ++g_live_nodes;
  return static_cast<NodeId>(nodes_.size() - 1);
}

bool Tape::any_grad(std::initializer_list<NodeId> ids) const {
  for (NodeId id : ids) {
    if (nodes_[id].requires_grad) return true;
  }
  return false;
}

NodeId Tape::constant(Eigen::MatrixXd value) {
  return push(std::move(value), false, nullptr);
}

NodeId Tape::variable(Eigen::MatrixXd value) {
  return push(std::move(value), true, nullptr);
}

void Tape::accumulate(NodeId id, const Eigen::MatrixXd& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.adjoint.size() == 0) {
    n.adjoint = g;
  } else {
    n.adjoint += g;
  }
}

void Tape::backward(NodeId loss, double seed) {
  if (nodes_[loss].value.size() != 1) {
    throw InputError("backward needs a scalar loss node");
  }
  for (auto& n : nodes_) n.adjoint.resize(0, 0);
  if (!nodes_[loss].requires_grad) return;
  nodes_[loss].adjoint = Eigen::MatrixXd::Constant(1, 1, seed);
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.adjoint.size() == 0) continue;
    if (!n.adjoint.allFinite()) {
      throw GradientOverflowError(
          "non-finite adjoint at tape node " + std::to_string(id),
          static_cast<std::size_t>(id));
    }
    if (n.backward) {
      // The callback may accumulate into earlier nodes only, so the
      // reference to this node's adjoint stays valid.
      n.backward(*this, n.adjoint);
    }
  }
}

NodeId Tape::custom(const std::vector<NodeId>& inputs, Eigen::MatrixXd value,
                    Backward backward) {
  bool grad = false;
  for (NodeId id : inputs) grad = grad || nodes_[id].requires_grad;
  return push(std::move(value), grad, std::move(backward));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Eigen::MatrixXd& A = value(a);
  const Eigen::MatrixXd& B = value(b);
  Eigen::MatrixXd v(A.rows(), B.cols());
  if (A.rows() == 3 && A.cols() == 3 && B.rows() == 3) {
    // Fixed-size products so 3-vector algebra rounds like the plain filter.
    const Eigen::Matrix3d A3 = A;
    for (Eigen::Index c = 0; c < B.cols(); ++c) {
      v.col(c) = A3 * Eigen::Vector3d(B.col(c));
    }
  } else {
    v.noalias() = A * B;
  }
  return push(std::move(v), any_grad({a, b}),
              [a, b](Tape& t, const Eigen::MatrixXd& g) {
                if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
                if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
              });
}

NodeId Tape::add(NodeId a, NodeId b) {
  return push(value(a) + value(b), any_grad({a, b}),
              [a, b](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a, g);
                t.accumulate(b, g);
              });
}

NodeId Tape::sub(NodeId a, NodeId b) {
  return push(value(a) - value(b), any_grad({a, b}),
              [a, b](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a, g);
                if (t.requires_grad(b)) t.accumulate(b, -g);
              });
}

NodeId Tape::scale(NodeId a, double s) {
  return push(s * value(a), any_grad({a}),
              [a, s](Tape& t, const Eigen::MatrixXd& g) { t.accumulate(a, s * g); });
}

NodeId Tape::transpose(NodeId a) {
  return push(value(a).transpose(), any_grad({a}),
              [a](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a, g.transpose());
              });
}

NodeId Tape::block(NodeId a, int row, int col, int rows, int cols) {
  return push(value(a).block(row, col, rows, cols), any_grad({a}),
              [=](Tape& t, const Eigen::MatrixXd& g) {
                Eigen::MatrixXd full =
                    Eigen::MatrixXd::Zero(t.value(a).rows(), t.value(a).cols());
                full.block(row, col, rows, cols) = g;
                t.accumulate(a, full);
              });
}

NodeId Tape::reshape(NodeId a, int rows, int cols) {
  const Eigen::MatrixXd& v = value(a);
  if (v.size() != static_cast<Eigen::Index>(rows) * cols) {
    throw InputError("reshape changes the element count");
  }
  Eigen::MatrixXd out = Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
  const Eigen::Index r0 = v.rows();
  const Eigen::Index c0 = v.cols();
  return push(std::move(out), any_grad({a}),
              [a, r0, c0](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a, Eigen::Map<const Eigen::MatrixXd>(g.data(), r0, c0));
              });
}

NodeId Tape::add_col_broadcast(NodeId a, NodeId col) {
  Eigen::MatrixXd v = value(a);
  v.colwise() += value(col).col(0);
  return push(std::move(v), any_grad({a, col}),
              [a, col](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a, g);
                if (t.requires_grad(col)) t.accumulate(col, g.rowwise().sum());
              });
}

NodeId Tape::relu(NodeId a) {
  return push(value(a).cwiseMax(0.0), any_grad({a}),
              [a](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a, (t.value(a).array() > 0.0).select(g, 0.0));
              });
}

NodeId Tape::tanh(NodeId a) {
  const NodeId out = static_cast<NodeId>(nodes_.size());
  return push(value(a).array().tanh().matrix(), any_grad({a}),
              [a, out](Tape& t, const Eigen::MatrixXd& g) {
                const Eigen::ArrayXXd y = t.value(out).array();
                t.accumulate(a, (g.array() * (1.0 - y.square())).matrix());
              });
}

NodeId Tape::softplus(NodeId a) {
  const Eigen::MatrixXd& x = value(a);
  Eigen::MatrixXd y = x.unaryExpr([](double v) {
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  });
  return push(std::move(y), any_grad({a}), [a](Tape& t, const Eigen::MatrixXd& g) {
    const Eigen::MatrixXd s = t.value(a).unaryExpr([](double v) {
      return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    t.accumulate(a, g.cwiseProduct(s));
  });
}

NodeId Tape::sym(NodeId a) {
  const Eigen::MatrixXd& v = value(a);
  return push(0.5 * (v + v.transpose()), any_grad({a}),
              [a](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a, 0.5 * (g + g.transpose()));
              });
}

NodeId Tape::squared_norm(NodeId a) {
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = value(a).squaredNorm();
  return push(std::move(v), any_grad({a}), [a](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a, (2.0 * g(0, 0)) * t.value(a));
  });
}

NodeId Tape::sum(const std::vector<NodeId>& terms) {
  if (terms.empty()) throw InputError("sum of no terms");
  Eigen::MatrixXd v = value(terms.front());
  bool grad = requires_grad(terms.front());
  for (std::size_t k = 1; k < terms.size(); ++k) {
    v += value(terms[k]);
    grad = grad || requires_grad(terms[k]);
  }
  return push(std::move(v), grad, [terms](Tape& t, const Eigen::MatrixXd& g) {
    for (NodeId id : terms) t.accumulate(id, g);
  });
}

NodeId Tape::quad(NodeId phi, NodeId m) {
  const Eigen::MatrixXd& F = value(phi);
  Eigen::MatrixXd v = F * value(m) * F.transpose();
  return push(std::move(v), any_grad({phi, m}),
              [phi, m](Tape& t, const Eigen::MatrixXd& g) {
                const Eigen::MatrixXd& F = t.value(phi);
                const Eigen::MatrixXd& M = t.value(m);
                if (t.requires_grad(phi)) {
                  t.accumulate(phi, g * F * M.transpose() + g.transpose() * F * M);
                }
                if (t.requires_grad(m)) t.accumulate(m, F.transpose() * g * F);
              });
}

NodeId Tape::skew(NodeId w) {
  const Eigen::MatrixXd& v = value(w);
  if (v.rows() != 3 || v.cols() != 1) throw InputError("skew needs a 3-vector");
  return push(lie::skew(v.col(0)), any_grad({w}),
              [w](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(w, skew_adjoint(g));
              });
}

NodeId Tape::so3_exp(NodeId w) {
  const Eigen::MatrixXd& v = value(w);
  if (v.rows() != 3 || v.cols() != 1) throw InputError("so3_exp needs a 3-vector");
  const NodeId out = static_cast<NodeId>(nodes_.size());
  return push(lie::so3_exp(v.col(0)), any_grad({w}),
              [w, out](Tape& t, const Eigen::MatrixXd& g) {
                const Eigen::Vector3d phi = t.value(w).col(0);
                const Eigen::Matrix3d R = t.value(out);
                const Eigen::Matrix3d M = R.transpose() * g;
                t.accumulate(w, lie::so3_right_jacobian(phi).transpose() *
                                    skew_adjoint(M));
              });
}

NodeId Tape::so3_jl_apply(NodeId phi, NodeId u) {
  const Eigen::MatrixXd& p = value(phi);
  if (p.rows() != 3 || p.cols() != 1 || value(u).rows() != 3) {
    throw InputError("so3_jl_apply needs a 3-vector and a 3xK matrix");
  }
  Eigen::MatrixXd v = lie::so3_left_jacobian(p.col(0)) * value(u);
  return push(std::move(v), any_grad({phi, u}),
              [phi, u](Tape& t, const Eigen::MatrixXd& g) {
                const Eigen::Vector3d f = t.value(phi).col(0);
                if (t.requires_grad(u)) {
                  t.accumulate(u, lie::so3_left_jacobian(f).transpose() * g);
                }
                if (!t.requires_grad(phi)) return;
                const lie::So3Coefficients k = lie::so3_coefficients(f.norm());
                const Eigen::MatrixXd& U = t.value(u);
                Eigen::Vector3d acc = Eigen::Vector3d::Zero();
                for (Eigen::Index c = 0; c < U.cols(); ++c) {
                  const Eigen::Vector3d x = U.col(c);
                  const Eigen::Vector3d fx = f.cross(x);
                  const Eigen::Vector3d ffx = f.cross(fx);
                  const Eigen::Matrix3d D =
                      fx * (k.db_over_theta * f.transpose()) - k.b * lie::skew(x) +
                      ffx * (k.dc_over_theta * f.transpose()) +
                      k.c * (f.dot(x) * Eigen::Matrix3d::Identity() +
                             f * x.transpose() - 2.0 * x * f.transpose());
                  acc += D.transpose() * g.col(c);
                }
                t.accumulate(phi, acc);
              });
}

NodeId Tape::cholesky(NodeId a) {
  const Eigen::LLT<Eigen::MatrixXd> llt(value(a));
  if (llt.info() != Eigen::Success) {
    throw SingularUpdateError("cholesky of a non positive definite matrix");
  }
  const NodeId out = static_cast<NodeId>(nodes_.size());
  Eigen::MatrixXd L = llt.matrixL();
  return push(std::move(L), any_grad({a}),
              [a, out](Tape& t, const Eigen::MatrixXd& g) {
                const Eigen::MatrixXd& L = t.value(out);
                Eigen::MatrixXd Phi = (L.transpose() * g).triangularView<Eigen::Lower>();
                Phi.diagonal() *= 0.5;
                // L^{-T} Phi L^{-1} by two triangular solves.
                Eigen::MatrixXd X = L.transpose().triangularView<Eigen::Upper>().solve(Phi);
                X = L.transpose()
                        .triangularView<Eigen::Upper>()
                        .solve(X.transpose())
                        .transpose()
                        .eval();
                t.accumulate(a, 0.5 * (X + X.transpose()));
              });
}

NodeId Tape::spd_solve(NodeId s, NodeId b) {
  const Eigen::LLT<Eigen::MatrixXd> llt(value(s));
  if (llt.info() != Eigen::Success) {
    throw SingularUpdateError("spd_solve with a non positive definite matrix");
  }
  const NodeId out = static_cast<NodeId>(nodes_.size());
  Eigen::MatrixXd x = llt.solve(value(b));
  return push(std::move(x), any_grad({s, b}),
              [s, b, out](Tape& t, const Eigen::MatrixXd& g) {
                const Eigen::LLT<Eigen::MatrixXd> llt(t.value(s));
                const Eigen::MatrixXd gb = llt.solve(g);
                if (t.requires_grad(b)) t.accumulate(b, gb);
                if (t.requires_grad(s)) {
                  t.accumulate(s, -gb * t.value(out).transpose());
                }
              });
}

}  // namespace ccinekf::ad
