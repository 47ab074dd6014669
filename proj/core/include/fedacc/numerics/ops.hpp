// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "fedacc/numerics/tape.hpp"

/// Differentiable primitives. Every op records a pullback on the tape of its
/// inputs; shapes are checked eagerly and reported with both operands.
namespace fedacc::ops {

inline constexpr double kLayerNormEps = 1e-5;

template <typename T> Var<T> Add(Var<T> a, Var<T> b);
template <typename T> Var<T> Mul(Var<T> a, Var<T> b);
template <typename T> Var<T> Scale(Var<T> a, T factor);
/// x + y where y's shape is a trailing suffix of x's shape.
template <typename T> Var<T> AddBroadcast(Var<T> x, Var<T> y);
/// [m,k] x [k,n] -> [m,n].
template <typename T> Var<T> MatMul(Var<T> a, Var<T> b);
/// x[..., in] * w[in, out] + b[out] over the last axis.
template <typename T> Var<T> Linear(Var<T> x, Var<T> w, std::optional<Var<T>> b);
/// Exact erf-based GELU.
template <typename T> Var<T> Gelu(Var<T> x);
/// Softmax over the last axis.
template <typename T> Var<T> Softmax(Var<T> x);
/// LayerNorm over the last axis with affine gamma/beta.
template <typename T>
Var<T> LayerNorm(Var<T> x, Var<T> gamma, Var<T> beta,
                 T eps = static_cast<T>(kLayerNormEps));
/// Multi-head scaled dot-product self-attention. qkv is [B, T, 3d] laid out
/// as q|k|v along the last axis, each split into num_heads contiguous slices.
/// Returns the concatenated head outputs [B, T, d].
template <typename T> Var<T> Attention(Var<T> qkv, std::size_t num_heads);
template <typename T> Var<T> Sum(Var<T> x);
template <typename T> Var<T> Mean(Var<T> x);
/// Mean softmax cross-entropy of logits [B, C] against integer labels.
template <typename T> Var<T> CrossEntropy(Var<T> logits, std::span<const int> labels);
/// x[:, t, :] of a [B, T, d] sequence.
template <typename T> Var<T> SelectToken(Var<T> x, std::size_t t);
/// Copy of x with x[:, t, :] overwritten by v [B, d].
template <typename T> Var<T> ReplaceToken(Var<T> x, std::size_t t, Var<T> v);
/// n tensors of shape [B, d] -> [B, n, d].
template <typename T> Var<T> StackTokens(const std::vector<Var<T>>& tokens);
/// [B, Ta, d] ++ [B, Tb, d] along the token axis.
template <typename T> Var<T> ConcatTokens(Var<T> a, Var<T> b);
/// v -> [batch, v.shape...] by repetition.
template <typename T> Var<T> BroadcastBatch(Var<T> v, std::size_t batch);
/// Inverted dropout; identity when rate == 0.
template <typename T> Var<T> Dropout(Var<T> x, T rate, std::mt19937_64& rng);
template <typename T> Var<T> Reshape(Var<T> x, Shape shape);
/// Rows [start, start + count) of a [R, d] matrix.
template <typename T> Var<T> SliceRows(Var<T> x, std::size_t start, std::size_t count);

}  // namespace fedacc::ops
