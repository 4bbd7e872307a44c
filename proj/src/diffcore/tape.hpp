// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "common/error.hpp"

namespace scale {

template <class Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named trainable tensor. Vectors are stored as 1 x n rows.
template <class Real>
struct ParamTensor {
  std::string name;
  Matrix<Real> value;
  Matrix<Real> grad;

  ParamTensor() = default;
  ParamTensor(std::string tensor_name, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(tensor_name)),
        value(Matrix<Real>::Zero(rows, cols)),
        grad(Matrix<Real>::Zero(rows, cols)) {}

  std::vector<std::size_t> shape() const {
    return {static_cast<std::size_t>(value.rows()), static_cast<std::size_t>(value.cols())};
  }
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Reverse-mode tape over dense row-major matrices.
///
/// Nodes are appended in evaluation order, so reverse iteration is a valid
/// topological order for the backward sweep. A node only keeps its backward
/// closure when at least one parent requires a gradient.
template <class Real>
class Tape {
 public:
  using Mat = Matrix<Real>;
  using BackwardFn = std::function<void(Tape&, const Mat& grad_out)>;

  Var constant(Mat value, const char* op = "constant") {
    return append(std::move(value), op, false, nullptr);
  }

  Var param(ParamTensor<Real>& p) {
    ParamTensor<Real>* target = &p;
    return append(target->value, p.name.c_str(), true,
                  [target](Tape&, const Mat& g) { target->grad += g; });
  }

  /// Appends an op node; `parents` decide whether gradients flow through it.
  Var push(Mat value, const char* op, std::initializer_list<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return append(std::move(value), op, needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Mat& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const char* op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Mat& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Index of the first node holding a NaN or Inf, or size() if none.
  std::size_t first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].value.allFinite()) return i;
    }
    return nodes_.size();
  }

  /// Populates ParamTensor::grad for every parameter reachable from `loss`.
  void backward(Var loss) {
    const Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) throw ValidationError("backward: loss must be a scalar node");
    const std::size_t bad = first_non_finite();
    if (bad < nodes_.size()) {
      throw NumericError("non-finite value in node #" + std::to_string(bad) + " (" +
                         nodes_[bad].op + ")");
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    accumulate(loss, Mat::Ones(1, 1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      const Mat g = std::move(n.grad);
      n.backward(*this, g);
    }
  }

  /// ReLU bookkeeping used to exclude kink coordinates from finite differences.
  void note_relu(const Mat& pre) {
    for (Eigen::Index i = 0; i < pre.size(); ++i) {
      const Real a = pre.data()[i];
      const Real mag = a < Real(0) ? -a : a;
      if (mag < min_abs_preactivation_) min_abs_preactivation_ = mag;
      relu_signature_ = relu_signature_ * 1099511628211ull + (a > Real(0) ? 1u : 2u);
    }
  }
  Real min_abs_preactivation() const { return min_abs_preactivation_; }
  std::uint64_t relu_signature() const { return relu_signature_; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    const char* op;
    bool requires_grad;
    BackwardFn backward;
  };

  Var append(Mat value, const char* op, bool needs_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Mat(), op, needs_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  Real min_abs_preactivation_ = std::numeric_limits<Real>::infinity();
  std::uint64_t relu_signature_ = 1469598103934665603ull;
};

}  // namespace scale
