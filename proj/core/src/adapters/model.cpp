// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/adapters/model.hpp"

#include <algorithm>

#include "fedacc/numerics/rng.hpp"

namespace fedacc {

template <typename T>
Model<T> Model<T>::Create(std::shared_ptr<const Backbone<T>> frozen, const ModelOptions& options,
                          std::uint64_t seed) {
  if (!frozen) throw Error(ErrorKind::kState, "model: no backbone");
  const BackboneConfig& cfg = frozen->config;
  if (options.num_classes < 2) throw Error(ErrorKind::kConfig, "model: need at least 2 classes");
  Model m;
  m.options = options;
  std::mt19937_64 rng = MakeRng(seed, {0xada});
  const std::size_t d = cfg.embed_dim;
  const std::size_t hidden = cfg.mlp_ratio * d;

  if (options.method.kind == MethodKind::kFullFineTune) {
    auto own = std::make_shared<Backbone<T>>(*frozen);
    own->Unfreeze();
    m.backbone = std::move(own);
  } else {
    m.backbone = std::move(frozen);
  }

  switch (options.method.kind) {
    case MethodKind::kAccumulator:
      m.accumulator = AccumulatorParams<T>::Make(cfg, options.accumulator, rng);
      m.shared_head = HeadParams<T>::Make("accumulator.head", options.accumulator.head_kind, d,
                                          hidden, options.num_classes, 0.0, rng);
      break;
    case MethodKind::kLwLinear:
    case MethodKind::kLwMlp:
    case MethodKind::kFullFineTune: {
      const HeadKind kind =
          options.method.kind == MethodKind::kLwLinear ? HeadKind::kLinear : HeadKind::kMlp;
      LayerwiseHeads<T> heads;
      for (std::size_t l = 0; l < cfg.depth; ++l) {
        heads.heads.push_back(HeadParams<T>::Make("heads." + std::to_string(l + 1), kind, d, hidden,
                                                  options.num_classes, options.layerwise_dropout,
                                                  rng));
      }
      m.layerwise = std::move(heads);
      break;
    }
  }
  if (options.method.with_pa) {
    m.parallel_adapter = ParallelAdapterParams<T>::Make(cfg, options.parallel_adapter, rng);
  }
  return m;
}

template <typename T>
Model<T> Model<T>::Clone() const {
  Model copy = *this;
  if (tunes_backbone()) copy.backbone = std::make_shared<Backbone<T>>(*backbone);
  return copy;
}

template <typename T>
ParamRefs<T> Model<T>::TrainableParams() {
  return MutableParams<T>(*this);
}

template <typename T>
ConstParamRefs<T> Model<T>::TrainableParams() const {
  ConstParamRefs<T> out;
  VisitParams(*this, [&](const Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::size_t Model<T>::NumTrainable() const {
  return CountParams<T>(*this);
}

template <typename T>
NamedTensors<T> Model<T>::TrainableState() const {
  NamedTensors<T> out;
  VisitParams(*this, [&](const Parameter<T>& p) { out.emplace(p.name, p.value); });
  return out;
}

template <typename T>
void Model<T>::LoadTrainableState(const NamedTensors<T>& state) {
  ParamRefs<T> params = TrainableParams();
  if (state.size() != params.size()) {
    throw Error(ErrorKind::kSchemaMismatch,
                "trainable state has " + std::to_string(state.size()) + " tensors, model has " +
                    std::to_string(params.size()));
  }
  for (const Parameter<T>* p : params) {
    auto it = state.find(p->name);
    if (it == state.end()) {
      throw Error(ErrorKind::kSchemaMismatch, "trainable state lacks '" + p->name + "'");
    }
    if (it->second.shape() != p->value.shape()) {
      throw Error(ErrorKind::kSchemaMismatch, "'" + p->name + "': shape " +
                                                  ShapeToString(it->second.shape()) + " vs " +
                                                  ShapeToString(p->value.shape()));
    }
  }
  for (Parameter<T>* p : params) p->value = state.at(p->name);
}

template <typename T>
ExitLogits<T> ForwardExits(Tape<T>& tape, const Model<T>& model, const Tensor<T>& images,
                           std::span<const std::size_t> exits, std::mt19937_64* rng) {
  const std::size_t depth = model.depth();
  ExitLogits<T> out;
  out.exits.assign(exits.begin(), exits.end());
  std::sort(out.exits.begin(), out.exits.end());
  out.exits.erase(std::unique(out.exits.begin(), out.exits.end()), out.exits.end());
  if (out.exits.empty()) throw Error(ErrorKind::kConfig, "forward: no exits requested");
  if (out.exits.front() < 1 || out.exits.back() > depth) {
    throw Error(ErrorKind::kConfig, "forward: exits must lie in [1, " + std::to_string(depth) + "]");
  }
  const std::size_t upto = out.exits.back();

  BlockSideBranch<T> side;
  if (model.parallel_adapter) {
    const auto& pa = *model.parallel_adapter;
    side = [&tape, &pa](std::size_t layer, Var<T> normed) { return pa.Forward(tape, layer, normed); };
  }

  if (model.accumulator) {
    const auto& acc = *model.accumulator;
    std::vector<std::optional<Var<T>>> h(depth + 1);
    auto wanted = [&](std::size_t l) {
      return std::binary_search(out.exits.begin(), out.exits.end(), l);
    };
    ClsTap<T> tap = [&](std::size_t layer, const ClsTrace<T>& trace) -> std::optional<Var<T>> {
      const bool replaces = acc.options.replace && (layer > 0 || acc.options.tap_tokenizer);
      if (!replaces && !wanted(layer)) return std::nullopt;
      h[layer] = Accumulate(tape, acc, std::span<const Var<T>>(trace));
      if (!replaces) return std::nullopt;
      return ReplacementToken(*h[layer]);
    };
    TapOutput<T> fwd = ForwardWithTaps(tape, *model.backbone, images, upto, tap, side);
    for (std::size_t e : out.exits) {
      if (!h[e]) h[e] = Accumulate(tape, acc, std::span<const Var<T>>(fwd.trace.data(), e + 1));
      out.logits.push_back(PredictAtExit(tape, acc, *model.shared_head, *h[e], fwd.trace[e]));
    }
    out.trace = std::move(fwd.trace);
    return out;
  }

  TapOutput<T> fwd = ForwardWithTaps(tape, *model.backbone, images, upto, ClsTap<T>{}, side);
  for (std::size_t e : out.exits) {
    Var<T> feature = model.backbone->final_norm.Forward(tape, fwd.trace[e]);
    out.logits.push_back(model.layerwise->heads[e - 1].Forward(tape, feature, rng));
  }
  out.trace = std::move(fwd.trace);
  return out;
}

template <typename T>
std::vector<int> ArgmaxRows(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw Error(ErrorKind::kShape, "argmax: expected [B, C], got " + ShapeToString(logits.shape()));
  }
  const std::size_t c = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    const T* row = logits.ptr() + r * c;
    out[r] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

template struct Model<float>;
template struct Model<double>;
template ExitLogits<float> ForwardExits<float>(Tape<float>&, const Model<float>&,
                                               const Tensor<float>&, std::span<const std::size_t>,
                                               std::mt19937_64*);
template ExitLogits<double> ForwardExits<double>(Tape<double>&, const Model<double>&,
                                                 const Tensor<double>&,
                                                 std::span<const std::size_t>, std::mt19937_64*);
template std::vector<int> ArgmaxRows<float>(const Tensor<float>&);
template std::vector<int> ArgmaxRows<double>(const Tensor<double>&);

}  // namespace fedacc
