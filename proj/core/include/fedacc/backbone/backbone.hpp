// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedacc/backbone/layers.hpp"
#include "fedacc/data/dataset.hpp"

namespace fedacc {

struct BackboneConfig {
  std::size_t depth = 4;
  std::size_t embed_dim = 32;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t patch_size = 4;
  std::size_t image_side = 16;
  std::size_t channels = 1;
  std::size_t pretrain_classes = 8;

  /// L=4, d=32, 4 heads, 4x4 patches over 16x16 single-channel images.
  static BackboneConfig Toy();
  /// DeiT-small layout (L=12, d=384, 6 heads, 16x16 patches of 224x224 RGB).
  /// Used for parameter accounting only.
  static BackboneConfig DeitSmallShape();

  void Validate() const;
  std::size_t num_patches() const;
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t seq_len() const { return num_patches() + 1; }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Tokenizer + positional embedding + class token + L pre-norm blocks + final
/// norm. Once frozen, nothing in here is written by training.
template <typename T>
struct Backbone {
  BackboneConfig config;
  LinearParams<T> patch_embed;  // [patch_dim, d]
  Parameter<T> pos_embed;       // [N + 1, d]
  Parameter<T> cls_token;       // [d]
  std::vector<BlockParams<T>> blocks;
  LayerNormParams<T> final_norm;

  static Backbone Init(const BackboneConfig& config, std::uint64_t seed);

  void Freeze() { SetTrainable<T>(*this, false); }
  void Unfreeze() { SetTrainable<T>(*this, true); }
  std::size_t NumParams() const { return CountParams<T>(*this); }
};

template <typename T, typename Fn>
void VisitParams(const Backbone<T>& b, Fn&& fn) {
  VisitParams(b.patch_embed, fn);
  fn(b.pos_embed);
  fn(b.cls_token);
  for (const auto& block : b.blocks) VisitParams(block, fn);
  VisitParams(b.final_norm, fn);
}

/// Class tokens emitted by the tokenizer (index 0) and by each executed block,
/// recorded before any replacement of that entry. Each entry is [B, d].
template <typename T>
using ClsTrace = std::vector<Var<T>>;

/// Called after the tokenizer (layer 0) and after each block l < upto_layer.
/// A returned [B, d] token overwrites the class slot of the running sequence.
template <typename T>
using ClsTap = std::function<std::optional<Var<T>>(std::size_t layer, const ClsTrace<T>& trace)>;

/// Per-block side branch for the MLP (parallel adapters); empty means none.
template <typename T>
using BlockSideBranch = std::function<Var<T>(std::size_t layer, Var<T> normed)>;

template <typename T>
struct TapOutput {
  Var<T> tokens;  // z^{upto_layer}, [B, N + 1, d]
  ClsTrace<T> trace;
};

/// [B, C, S, S] images -> [B, N, C * p * p] patch vectors, patches in
/// row-major grid order, each flattened channel-major.
template <typename T>
Tensor<T> Patchify(const Tensor<T>& images, std::size_t patch_size);

/// z^0 = Tokenizer(x) + p, then z^l = block_l(z^{l-1}) through upto_layer,
/// invoking `tap` between stages.
template <typename T>
TapOutput<T> ForwardWithTaps(Tape<T>& tape, const Backbone<T>& backbone,
                             const Tensor<T>& images, std::size_t upto_layer,
                             const ClsTap<T>& tap = {}, const BlockSideBranch<T>& side = {});

/// Exact backbone parameter count: tokenizer, positional embedding, class
/// token, blocks and final norm (no classification head).
std::size_t CountBackboneParams(const BackboneConfig& config);

struct PretrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double holdout_fraction = 0.2;
  double accuracy_floor = 0.90;
};

template <typename T>
struct PretrainResult {
  Backbone<T> backbone;
  double holdout_accuracy = 0.0;
  std::vector<double> epoch_losses;
};

/// Trains the backbone centrally with a temporary linear head on the final
/// normed class token, discards the head and freezes the backbone. A holdout
/// accuracy below the floor produces a warning, not an error. epochs == 0
/// returns the frozen random initialization.
template <typename T>
PretrainResult<T> PretrainBackbone(const BackboneConfig& config, const Dataset& data,
                                   const PretrainOptions& options, std::uint64_t seed);

extern template struct Backbone<float>;
extern template struct Backbone<double>;

}  // namespace fedacc
