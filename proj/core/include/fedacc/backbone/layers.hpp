// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <random>
#include <string>

#include "fedacc/numerics/ops.hpp"
#include "fedacc/numerics/parameter.hpp"

namespace fedacc {

enum class Init { kZeros, kOnes, kXavierUniform, kNormal, kTruncNormal };

/// Tensor of the given shape filled per `init`. For the normal variants `std`
/// is the standard deviation; truncation is at two standard deviations.
template <typename T>
Tensor<T> InitTensor(const Shape& shape, Init init, double std, std::mt19937_64& rng);

template <typename T>
struct LinearParams {
  Parameter<T> weight;  // [in, out]
  Parameter<T> bias;    // [out]

  static LinearParams Make(const std::string& name, std::size_t in, std::size_t out,
                           Init init, double std, std::mt19937_64& rng);
  Var<T> Forward(Tape<T>& tape, Var<T> x) const;
};

template <typename T>
struct LayerNormParams {
  Parameter<T> gamma;
  Parameter<T> beta;

  static LayerNormParams Make(const std::string& name, std::size_t dim);
  Var<T> Forward(Tape<T>& tape, Var<T> x) const;
};

/// Extra term added to a block's MLP output before the residual add. Receives
/// the LayerNorm output that feeds the MLP.
template <typename T>
using MlpSideBranch = std::function<Var<T>(Var<T> normed)>;

/// Pre-norm transformer block:
///   z = MSA(LN(z)) + z
///   z = MLP(LN(z)) + z
template <typename T>
struct BlockParams {
  LayerNormParams<T> norm1;
  LinearParams<T> qkv;
  LinearParams<T> proj;
  LayerNormParams<T> norm2;
  LinearParams<T> fc1;
  LinearParams<T> fc2;
  std::size_t num_heads = 1;

  static BlockParams Make(const std::string& name, std::size_t dim, std::size_t num_heads,
                          std::size_t mlp_ratio, std::mt19937_64& rng);
  Var<T> Forward(Tape<T>& tape, Var<T> z, const MlpSideBranch<T>& side = {}) const;

  /// 12 d^2 + 13 d for mlp_ratio 4; general form below.
  static std::size_t CountParams(std::size_t dim, std::size_t mlp_ratio);
};

/// Visits every parameter of a structure in a fixed order. Overloads exist for
/// each parameter aggregate so higher-level modules compose them.
template <typename T, typename Fn>
void VisitParams(const LinearParams<T>& p, Fn&& fn) {
  fn(p.weight);
  fn(p.bias);
}
template <typename T, typename Fn>
void VisitParams(const LayerNormParams<T>& p, Fn&& fn) {
  fn(p.gamma);
  fn(p.beta);
}
template <typename T, typename Fn>
void VisitParams(const BlockParams<T>& p, Fn&& fn) {
  VisitParams(p.norm1, fn);
  VisitParams(p.qkv, fn);
  VisitParams(p.proj, fn);
  VisitParams(p.norm2, fn);
  VisitParams(p.fc1, fn);
  VisitParams(p.fc2, fn);
}

/// Mutable parameter pointers collected through VisitParams.
template <typename T, typename S>
ParamRefs<T> MutableParams(S& structure) {
  ParamRefs<T> out;
  VisitParams(std::as_const(structure),
              [&](const Parameter<T>& p) { out.push_back(const_cast<Parameter<T>*>(&p)); });
  return out;
}

template <typename T, typename S>
std::size_t CountParams(const S& structure) {
  std::size_t n = 0;
  VisitParams(structure, [&](const Parameter<T>& p) { n += p.size(); });
  return n;
}

template <typename T, typename S>
void SetTrainable(S& structure, bool trainable) {
  for (Parameter<T>* p : MutableParams<T>(structure)) p->trainable = trainable;
}

}  // namespace fedacc
