// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fedacc/adapters/adapters.hpp"

namespace fedacc {

struct ModelOptions {
  AdapterMethod method;
  AccumulatorOptions accumulator;
  ParallelAdapterOptions parallel_adapter;
  std::size_t num_classes = 8;
  /// Dropout inside layer-wise MLP heads while training.
  double layerwise_dropout = 0.1;
};

/// Flat name -> value map of trained parameters (w_PE).
template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

/// A backbone plus the adaptation modules of one method.
///
/// Frozen backbones are shared between copies through the shared_ptr; a
/// FullFineTune model owns a private, trainable backbone.
template <typename T>
struct Model {
  ModelOptions options;
  std::shared_ptr<const Backbone<T>> backbone;
  std::optional<AccumulatorParams<T>> accumulator;
  std::optional<HeadParams<T>> shared_head;
  std::optional<LayerwiseHeads<T>> layerwise;
  std::optional<ParallelAdapterParams<T>> parallel_adapter;

  static Model Create(std::shared_ptr<const Backbone<T>> frozen, const ModelOptions& options,
                      std::uint64_t seed);

  std::size_t depth() const { return backbone->config.depth; }
  bool tunes_backbone() const { return options.method.kind == MethodKind::kFullFineTune; }

  /// Copy whose trainable modules (and backbone, under FullFineTune) are
  /// private. The frozen backbone stays shared.
  Model Clone() const;

  /// Every parameter the method trains, in a fixed order.
  ParamRefs<T> TrainableParams();
  ConstParamRefs<T> TrainableParams() const;
  std::size_t NumTrainable() const;

  NamedTensors<T> TrainableState() const;
  /// Overwrites trainable values; the name/shape schema must match exactly.
  void LoadTrainableState(const NamedTensors<T>& state);
};

template <typename T, typename Fn>
void VisitParams(const Model<T>& m, Fn&& fn) {
  if (m.tunes_backbone()) VisitParams(*m.backbone, fn);
  if (m.accumulator) VisitParams(*m.accumulator, fn);
  if (m.shared_head) VisitParams(*m.shared_head, fn);
  if (m.layerwise) VisitParams(*m.layerwise, fn);
  if (m.parallel_adapter) VisitParams(*m.parallel_adapter, fn);
}

/// Logits at each requested exit (1-based), in ascending exit order.
template <typename T>
struct ExitLogits {
  std::vector<std::size_t> exits;
  std::vector<Var<T>> logits;  // each [B, C]
  ClsTrace<T> trace;
};

/// Runs the backbone through max(exits) and evaluates the requested exits.
/// One pass serves every exit because stream replacements at layer j depend
/// only on the trace up to j. Pass `rng` to enable training-time dropout.
template <typename T>
ExitLogits<T> ForwardExits(Tape<T>& tape, const Model<T>& model, const Tensor<T>& images,
                           std::span<const std::size_t> exits, std::mt19937_64* rng = nullptr);

/// argmax with ties resolved toward the lowest class index.
template <typename T>
std::vector<int> ArgmaxRows(const Tensor<T>& logits);

extern template struct Model<float>;
extern template struct Model<double>;

}  // namespace fedacc
