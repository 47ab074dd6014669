// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fedacc/numerics/tensor.hpp"

namespace fedacc {

/// A named tensor with a gradient buffer.
///
/// `grad` is accumulation state written by Tape::Backward. It is mutable so
/// forward passes can take model structures by const reference; a parameter
/// with `trainable == false` never has its gradient written.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  mutable Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool is_trainable = true)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape()),
        trainable(is_trainable) {}

  std::size_t size() const { return value.size(); }
  void ZeroGrad() const { grad.Fill(T{0}); }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;
template <typename T>
using ConstParamRefs = std::vector<const Parameter<T>*>;

}  // namespace fedacc
