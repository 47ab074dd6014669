// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/numerics/tape.hpp"

#include <string>

namespace fedacc {

template <typename T>
Var<T> Tape<T>::Push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::Constant(Tensor<T> value) {
  Node node;
  node.owned = std::move(value);
  return Push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::Input(Tensor<T> value, bool requires_grad) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = record_grad_ && requires_grad;
  node.keep_grad = node.requires_grad;
  return Push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::Param(const Parameter<T>& param) {
  Node node;
  node.ref = &param.value;
  node.param = &param;
  node.requires_grad = record_grad_ && param.trainable;
  return Push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::Record(std::string_view op, Tensor<T> value,
                       const std::vector<Var<T>>& inputs, Pullback pullback) {
  if (!value.AllFinite()) {
    throw Error(ErrorKind::kNumeric,
                "numeric overflow: non-finite output from " + std::string(op) +
                    " with shape " + ShapeToString(value.shape()));
  }
  Node node;
  node.owned = std::move(value);
  for (const auto& in : inputs) {
    if (in.tape != this) {
      throw Error(ErrorKind::kState, std::string(op) + ": input from another tape");
    }
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.pullback = std::move(pullback);
  return Push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::Record(std::string_view op, Tensor<T> value,
                       std::initializer_list<Var<T>> inputs, Pullback pullback) {
  return Record(op, std::move(value), std::vector<Var<T>>(inputs),
                std::move(pullback));
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::uint32_t id) const {
  const Node& node = nodes_.at(id);
  return node.ref ? *node.ref : node.owned;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::uint32_t id) {
  Node& node = nodes_.at(id);
  const Tensor<T>& v = value(id);
  if (node.grad.size() != v.size() || node.grad.shape() != v.shape()) {
    node.grad = Tensor<T>(v.shape());
  }
  return node.grad;
}

template <typename T>
void Tape<T>::Backward(Var<T> loss) {
  if (consumed_) throw Error(ErrorKind::kState, "backward: tape already consumed");
  if (loss.tape != this) throw Error(ErrorKind::kState, "backward: loss from another tape");
  if (value(loss.id).size() != 1) {
    throw Error(ErrorKind::kShape, "backward: loss must be scalar, got shape " +
                                       ShapeToString(value(loss.id).shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] = T{1};
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.pullback) {
      node.pullback(*this, id);
      node.pullback = nullptr;
    }
    if (node.param != nullptr && node.param->trainable) {
      Tensor<T>& dst = node.param->grad;
      if (dst.shape() != node.grad.shape()) dst = Tensor<T>(node.grad.shape());
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
    }
    // Intermediate gradients are no longer needed once propagated.
    if (!node.keep_grad) node.grad = Tensor<T>();
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace fedacc
