// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedacc/backbone/backbone.hpp"

namespace fedacc {

enum class MethodKind { kFullFineTune, kLwLinear, kLwMlp, kAccumulator };
enum class HeadKind { kMlp, kLinear };

std::string_view ToString(MethodKind kind);
MethodKind ParseMethodKind(std::string_view name);
std::string_view ToString(HeadKind kind);
HeadKind ParseHeadKind(std::string_view name);

/// Which parameters are trained. FullFineTune trains the backbone together
/// with layer-wise MLP heads; every other method keeps the backbone frozen.
struct AdapterMethod {
  MethodKind kind = MethodKind::kAccumulator;
  bool with_pa = false;

  friend bool operator==(const AdapterMethod&, const AdapterMethod&) = default;
};

/// Accumulator structure and ablation switches.
struct AccumulatorOptions {
  std::size_t depth = 1;
  bool replace = true;
  bool residual = true;
  /// Also rewrite the tokenizer's class token (layer 0) before block 1.
  bool tap_tokenizer = true;
  HeadKind head_kind = HeadKind::kMlp;
};

struct ParallelAdapterOptions {
  /// Bottleneck width; 0 selects max(4, round(d / 6)).
  std::size_t rank = 0;
  double scale = 4.0;

  std::size_t ResolvedRank(std::size_t embed_dim) const;
};

/// Transformer over the history of class tokens, led by a learnable client
/// token. Its blocks mirror the backbone block layout.
template <typename T>
struct AccumulatorParams {
  Parameter<T> client_token;  // [d], no positional term
  Parameter<T> layer_pos;     // [L + 1, d], one row per layer index 0..L
  std::vector<BlockParams<T>> blocks;
  AccumulatorOptions options;

  static AccumulatorParams Make(const BackboneConfig& backbone, const AccumulatorOptions& options,
                                std::mt19937_64& rng);
};

template <typename T, typename Fn>
void VisitParams(const AccumulatorParams<T>& a, Fn&& fn) {
  fn(a.client_token);
  fn(a.layer_pos);
  for (const auto& block : a.blocks) VisitParams(block, fn);
}

/// Classification head: d -> ratio*d -> C with GELU, or d -> C.
template <typename T>
struct HeadParams {
  HeadKind kind = HeadKind::kMlp;
  LinearParams<T> fc1;
  std::optional<LinearParams<T>> fc2;
  double dropout = 0.0;

  static HeadParams Make(const std::string& name, HeadKind kind, std::size_t dim,
                         std::size_t hidden, std::size_t classes, double dropout,
                         std::mt19937_64& rng);
  /// Dropout is applied only when `rng` is given (training).
  Var<T> Forward(Tape<T>& tape, Var<T> x, std::mt19937_64* rng = nullptr) const;
};

template <typename T, typename Fn>
void VisitParams(const HeadParams<T>& h, Fn&& fn) {
  VisitParams(h.fc1, fn);
  if (h.fc2) VisitParams(*h.fc2, fn);
}

/// One independent head per exit layer.
template <typename T>
struct LayerwiseHeads {
  std::vector<HeadParams<T>> heads;
};

template <typename T, typename Fn>
void VisitParams(const LayerwiseHeads<T>& h, Fn&& fn) {
  for (const auto& head : h.heads) VisitParams(head, fn);
}

/// Bottleneck adapters running beside each block's MLP:
///   MLP(LN(z)) + scale * Up(GELU(Down(LN(z)))).
/// Up-projections start at zero so the adapted block initially equals the
/// frozen one.
template <typename T>
struct ParallelAdapterParams {
  std::vector<LinearParams<T>> down;
  std::vector<LinearParams<T>> up;
  double scale = 4.0;

  static ParallelAdapterParams Make(const BackboneConfig& backbone,
                                    const ParallelAdapterOptions& options, std::mt19937_64& rng);
  /// Side-branch output for block `layer` (0-based) given the MLP's normed input.
  Var<T> Forward(Tape<T>& tape, std::size_t layer, Var<T> normed) const;
};

template <typename T, typename Fn>
void VisitParams(const ParallelAdapterParams<T>& pa, Fn&& fn) {
  for (std::size_t i = 0; i < pa.down.size(); ++i) {
    VisitParams(pa.down[i], fn);
    VisitParams(pa.up[i], fn);
  }
}

/// Runs the accumulator over [z_client, cls_0 + p'_0, ..., cls_l + p'_l] where
/// l + 1 == trace.size(). Returns h^l with shape [B, l + 2, d].
template <typename T>
Var<T> Accumulate(Tape<T>& tape, const AccumulatorParams<T>& acc, std::span<const Var<T>> trace);

/// The token that replaces cls_l in the backbone stream: the last element of h^l.
template <typename T>
Var<T> ReplacementToken(Var<T> h);

/// head(h^l_0 + cls_l), or head(h^l_0) with the residual disabled.
template <typename T>
Var<T> PredictAtExit(Tape<T>& tape, const AccumulatorParams<T>& acc, const HeadParams<T>& head,
                     Var<T> h, Var<T> original_cls);

/// Symbolic counts used for the parameter table.
std::size_t CountHeadParams(HeadKind kind, std::size_t dim, std::size_t hidden,
                            std::size_t classes);
std::size_t CountAccumulatorParams(const BackboneConfig& cfg, const AccumulatorOptions& options);
std::size_t CountParallelAdapterParams(const BackboneConfig& cfg,
                                       const ParallelAdapterOptions& options);
/// Size of the trained set w_PE for a method (FullFineTune: backbone plus
/// layer-wise MLP heads).
std::size_t CountTrainableParams(const AdapterMethod& method, const BackboneConfig& cfg,
                                 std::size_t num_classes,
                                 const AccumulatorOptions& acc = {},
                                 const ParallelAdapterOptions& pa = {});

/// Inference cost of stopping at one exit, per example.
struct ExitBudget {
  std::size_t exit = 0;
  std::size_t params_touched = 0;
  std::uint64_t macs = 0;
};

std::vector<ExitBudget> EstimateExitBudgets(const AdapterMethod& method, const BackboneConfig& cfg,
                                            std::size_t num_classes,
                                            const AccumulatorOptions& acc = {},
                                            const ParallelAdapterOptions& pa = {});

}  // namespace fedacc
