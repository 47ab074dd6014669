// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string_view>

#include "fedacc/numerics/parameter.hpp"
#include "fedacc/numerics/tensor.hpp"

namespace fedacc {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Records one forward pass and replays it backwards.
///
/// Nodes are appended in execution order, so the reverse of insertion order is
/// a reverse topological order. Nodes whose inputs carry no gradient are
/// recorded without a pullback, which lets frozen sub-graphs skip the reverse
/// sweep entirely.
template <typename T>
class Tape {
 public:
  using Pullback = std::function<void(Tape&, std::uint32_t out)>;

  Tape() = default;
  /// With record_grad == false parameters enter as constants, so nothing on
  /// the tape carries a pullback (inference mode).
  explicit Tape(bool record_grad) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> Constant(Tensor<T> value);
  /// A free input; with `requires_grad` its gradient is kept for GradOf().
  Var<T> Input(Tensor<T> value, bool requires_grad);
  /// Leaf bound to a parameter. The value is referenced, not copied, and must
  /// outlive the tape.
  Var<T> Param(const Parameter<T>& param);

  Var<T> Record(std::string_view op, Tensor<T> value,
                std::initializer_list<Var<T>> inputs, Pullback pullback);
  Var<T> Record(std::string_view op, Tensor<T> value,
                const std::vector<Var<T>>& inputs, Pullback pullback);

  const Tensor<T>& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(std::uint32_t id);
  const Tensor<T>& GradOf(Var<T> v) { return grad(v.id); }

  /// Reverse sweep from a scalar loss. Accumulates into the `grad` buffer of
  /// every trainable parameter reached. A tape can be swept once.
  void Backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    const Parameter<T>* param = nullptr;
    Pullback pullback;
    bool requires_grad = false;
    bool keep_grad = false;
  };

  Var<T> Push(Node node);

  std::deque<Node> nodes_;
  bool consumed_ = false;
  bool record_grad_ = true;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace fedacc
