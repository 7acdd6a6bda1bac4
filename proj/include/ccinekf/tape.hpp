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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace ccinekf::ad {

using NodeId = std::int32_t;

// Append-only record of matrix-valued operations. Every node stores its
// value; adjoints are allocated during the reverse sweep only for nodes that
// depend on a variable.
class Tape {
 public:
  // Accumulates into the inputs given the output adjoint.
  using Backward = std::function<void(Tape&, const Eigen::MatrixXd&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&& other) noexcept;
  Tape& operator=(Tape&& other) noexcept;
  ~Tape();

  NodeId constant(Eigen::MatrixXd value);
  NodeId variable(Eigen::MatrixXd value);

  const Eigen::MatrixXd& value(NodeId id) const { return nodes_[id].value; }
  // Zero-sized until the reverse sweep reaches the node.
  const Eigen::MatrixXd& adjoint(NodeId id) const { return nodes_[id].adjoint; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Seeds d(loss)/d(loss) = seed and sweeps in reverse. The loss node must be
  // 1x1. Previous adjoints are discarded. Throws GradientOverflowError when a
  // non-finite adjoint appears.
  void backward(NodeId loss, double seed = 1.0);

  // Adds `g` into the adjoint of `id` (no-op for constants).
  void accumulate(NodeId id, const Eigen::MatrixXd& g);

  // User-defined node; `backward` may call accumulate on any of `inputs`.
  NodeId custom(const std::vector<NodeId>& inputs, Eigen::MatrixXd value,
                Backward backward);

  // Elementwise and linear-algebra primitives.
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId transpose(NodeId a);
  NodeId block(NodeId a, int row, int col, int rows, int cols);
  // Column-major reinterpretation.
  NodeId reshape(NodeId a, int rows, int cols);
  NodeId add_col_broadcast(NodeId a, NodeId col);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId softplus(NodeId a);
  NodeId sym(NodeId a);
  NodeId squared_norm(NodeId a);
  NodeId sum(const std::vector<NodeId>& terms);
  // Phi M Phi^T.
  NodeId quad(NodeId phi, NodeId m);
  // 3x1 -> 3x3 cross-product matrix.
  NodeId skew(NodeId w);
  NodeId so3_exp(NodeId w);
  // J_l(phi) U applied to each column of the 3xK matrix U.
  NodeId so3_jl_apply(NodeId phi, NodeId u);
  // Lower Cholesky factor of a symmetric positive definite matrix.
  NodeId cholesky(NodeId a);
  // S^{-1} B for symmetric positive definite S.
  NodeId spd_solve(NodeId s, NodeId b);

  // Number of Tape nodes alive in the process.
  static std::int64_t live_nodes();

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd adjoint;
    bool requires_grad = false;
    Backward backward;
  };

  NodeId push(Eigen::MatrixXd value, bool requires_grad, Backward backward);
  bool any_grad(std::initializer_list<NodeId> ids) const;

  std::vector<Node> nodes_;
};

// Adjoint of vee for a 3x3 matrix adjoint: d<S_bar, [w]x>/dw.
Eigen::Vector3d skew_adjoint(const Eigen::Matrix3d& s_bar);

}  // namespace ccinekf::ad
