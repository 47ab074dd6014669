// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/adapters/adapters.hpp"

#include <cmath>

namespace fedacc {

std::string_view ToString(MethodKind kind) {
  switch (kind) {
    case MethodKind::kFullFineTune: return "full_finetune";
    case MethodKind::kLwLinear: return "lw_linear";
    case MethodKind::kLwMlp: return "lw_mlp";
    case MethodKind::kAccumulator: return "accumulator";
  }
  return "unknown";
}

MethodKind ParseMethodKind(std::string_view name) {
  for (MethodKind k : {MethodKind::kFullFineTune, MethodKind::kLwLinear, MethodKind::kLwMlp,
                       MethodKind::kAccumulator}) {
    if (name == ToString(k)) return k;
  }
  throw Error(ErrorKind::kConfig, "unknown adapter method '" + std::string(name) +
                                      "' (expected full_finetune, lw_linear, lw_mlp, accumulator)");
}

std::string_view ToString(HeadKind kind) { return kind == HeadKind::kMlp ? "mlp" : "linear"; }

HeadKind ParseHeadKind(std::string_view name) {
  if (name == "mlp") return HeadKind::kMlp;
  if (name == "linear") return HeadKind::kLinear;
  throw Error(ErrorKind::kConfig, "unknown head kind '" + std::string(name) + "'");
}

std::size_t ParallelAdapterOptions::ResolvedRank(std::size_t embed_dim) const {
  if (rank > 0) return rank;
  const auto r = static_cast<std::size_t>(std::lround(static_cast<double>(embed_dim) / 6.0));
  return std::max<std::size_t>(4, r);
}

template <typename T>
AccumulatorParams<T> AccumulatorParams<T>::Make(const BackboneConfig& backbone,
                                                const AccumulatorOptions& options,
                                                std::mt19937_64& rng) {
  if (options.depth == 0) throw Error(ErrorKind::kConfig, "accumulator depth must be >= 1");
  const std::size_t d = backbone.embed_dim;
  AccumulatorParams a;
  a.options = options;
  a.client_token = Parameter<T>("accumulator.client_token",
                                InitTensor<T>({d}, Init::kNormal, 0.02, rng));
  a.layer_pos = Parameter<T>("accumulator.layer_pos",
                             InitTensor<T>({backbone.depth + 1, d}, Init::kNormal, 0.02, rng));
  for (std::size_t i = 0; i < options.depth; ++i) {
    a.blocks.push_back(BlockParams<T>::Make("accumulator.blocks." + std::to_string(i), d,
                                            backbone.num_heads, backbone.mlp_ratio, rng));
  }
  return a;
}

template <typename T>
HeadParams<T> HeadParams<T>::Make(const std::string& name, HeadKind kind, std::size_t dim,
                                  std::size_t hidden, std::size_t classes, double dropout,
                                  std::mt19937_64& rng) {
  HeadParams h;
  h.kind = kind;
  h.dropout = dropout;
  if (kind == HeadKind::kLinear) {
    h.fc1 = LinearParams<T>::Make(name + ".fc", dim, classes, Init::kXavierUniform, 0, rng);
  } else {
    h.fc1 = LinearParams<T>::Make(name + ".fc1", dim, hidden, Init::kXavierUniform, 0, rng);
    h.fc2 = LinearParams<T>::Make(name + ".fc2", hidden, classes, Init::kXavierUniform, 0, rng);
  }
  return h;
}

template <typename T>
Var<T> HeadParams<T>::Forward(Tape<T>& tape, Var<T> x, std::mt19937_64* rng) const {
  if (kind == HeadKind::kLinear) return fc1.Forward(tape, x);
  Var<T> hidden = ops::Gelu(fc1.Forward(tape, x));
  if (rng != nullptr && dropout > 0.0) hidden = ops::Dropout(hidden, static_cast<T>(dropout), *rng);
  return fc2->Forward(tape, hidden);
}

template <typename T>
ParallelAdapterParams<T> ParallelAdapterParams<T>::Make(const BackboneConfig& backbone,
                                                        const ParallelAdapterOptions& options,
                                                        std::mt19937_64& rng) {
  const std::size_t d = backbone.embed_dim;
  const std::size_t r = options.ResolvedRank(d);
  ParallelAdapterParams pa;
  pa.scale = options.scale;
  for (std::size_t l = 0; l < backbone.depth; ++l) {
    const std::string name = "parallel_adapter." + std::to_string(l);
    pa.down.push_back(LinearParams<T>::Make(name + ".down", d, r, Init::kXavierUniform, 0, rng));
    pa.up.push_back(LinearParams<T>::Make(name + ".up", r, d, Init::kZeros, 0, rng));
  }
  return pa;
}

template <typename T>
Var<T> ParallelAdapterParams<T>::Forward(Tape<T>& tape, std::size_t layer, Var<T> normed) const {
  if (layer >= down.size()) {
    throw Error(ErrorKind::kConfig, "parallel adapter: layer " + std::to_string(layer) +
                                        " out of range");
  }
  Var<T> h = up[layer].Forward(tape, ops::Gelu(down[layer].Forward(tape, normed)));
  return ops::Scale(h, static_cast<T>(scale));
}

template <typename T>
Var<T> Accumulate(Tape<T>& tape, const AccumulatorParams<T>& acc, std::span<const Var<T>> trace) {
  const std::size_t rows = acc.layer_pos.value.dim(0);
  if (trace.empty() || trace.size() > rows) {
    throw Error(ErrorKind::kShape, "accumulate: trace of length " + std::to_string(trace.size()) +
                                       " needs between 1 and " + std::to_string(rows) +
                                       " positional rows");
  }
  const std::size_t batch = trace.front().shape().at(0);
  const std::size_t d = acc.client_token.value.dim(0);
  Var<T> history = ops::StackTokens(std::vector<Var<T>>(trace.begin(), trace.end()));
  history = ops::AddBroadcast(history, ops::SliceRows(tape.Param(acc.layer_pos), 0, trace.size()));
  Var<T> client = ops::Reshape(ops::BroadcastBatch(tape.Param(acc.client_token), batch),
                               Shape{batch, 1, d});
  Var<T> h = ops::ConcatTokens(client, history);
  for (const auto& block : acc.blocks) h = block.Forward(tape, h);
  return h;
}

template <typename T>
Var<T> ReplacementToken(Var<T> h) {
  return ops::SelectToken(h, h.shape().at(1) - 1);
}

template <typename T>
Var<T> PredictAtExit(Tape<T>& tape, const AccumulatorParams<T>& acc, const HeadParams<T>& head,
                     Var<T> h, Var<T> original_cls) {
  Var<T> feature = ops::SelectToken(h, 0);
  if (acc.options.residual) feature = ops::Add(feature, original_cls);
  return head.Forward(tape, feature);
}

std::size_t CountHeadParams(HeadKind kind, std::size_t dim, std::size_t hidden,
                            std::size_t classes) {
  if (kind == HeadKind::kLinear) return dim * classes + classes;
  return dim * hidden + hidden + hidden * classes + classes;
}

std::size_t CountAccumulatorParams(const BackboneConfig& cfg, const AccumulatorOptions& options) {
  const std::size_t d = cfg.embed_dim;
  return d + (cfg.depth + 1) * d + options.depth * BlockParams<double>::CountParams(d, cfg.mlp_ratio);
}

std::size_t CountParallelAdapterParams(const BackboneConfig& cfg,
                                       const ParallelAdapterOptions& options) {
  const std::size_t d = cfg.embed_dim;
  const std::size_t r = options.ResolvedRank(d);
  return cfg.depth * (d * r + r + r * d + d);
}

std::size_t CountTrainableParams(const AdapterMethod& method, const BackboneConfig& cfg,
                                 std::size_t num_classes, const AccumulatorOptions& acc,
                                 const ParallelAdapterOptions& pa) {
  cfg.Validate();
  const std::size_t d = cfg.embed_dim;
  const std::size_t hidden = cfg.mlp_ratio * d;
  std::size_t n = 0;
  switch (method.kind) {
    case MethodKind::kFullFineTune:
      n = CountBackboneParams(cfg) + cfg.depth * CountHeadParams(HeadKind::kMlp, d, hidden, num_classes);
      break;
    case MethodKind::kLwLinear:
      n = cfg.depth * CountHeadParams(HeadKind::kLinear, d, hidden, num_classes);
      break;
    case MethodKind::kLwMlp:
      n = cfg.depth * CountHeadParams(HeadKind::kMlp, d, hidden, num_classes);
      break;
    case MethodKind::kAccumulator:
      n = CountAccumulatorParams(cfg, acc) + CountHeadParams(acc.head_kind, d, hidden, num_classes);
      break;
  }
  if (method.with_pa) n += CountParallelAdapterParams(cfg, pa);
  return n;
}

namespace {

std::uint64_t BlockMacs(std::uint64_t tokens, std::uint64_t d, std::uint64_t hidden) {
  return tokens * (3 * d * d + d * d + 2 * d * hidden) + 2 * tokens * tokens * d;
}

}  // namespace

std::vector<ExitBudget> EstimateExitBudgets(const AdapterMethod& method, const BackboneConfig& cfg,
                                            std::size_t num_classes,
                                            const AccumulatorOptions& acc,
                                            const ParallelAdapterOptions& pa) {
  cfg.Validate();
  const std::size_t d = cfg.embed_dim;
  const std::size_t hidden = cfg.mlp_ratio * d;
  const std::size_t tokens = cfg.seq_len();
  const std::size_t block = BlockParams<double>::CountParams(d, cfg.mlp_ratio);
  const std::size_t r = pa.ResolvedRank(d);
  const std::size_t stem = cfg.patch_dim() * d + d + tokens * d + d;

  std::vector<ExitBudget> out;
  for (std::size_t exit = 1; exit <= cfg.depth; ++exit) {
    ExitBudget b{exit, stem + exit * block, 0};
    b.macs = static_cast<std::uint64_t>(cfg.num_patches()) * cfg.patch_dim() * d +
             exit * BlockMacs(tokens, d, hidden);
    if (method.with_pa) {
      b.params_touched += exit * (2 * d * r + r + d);
      b.macs += exit * static_cast<std::uint64_t>(tokens) * 2 * d * r;
    }
    switch (method.kind) {
      case MethodKind::kLwLinear:
        b.params_touched += 2 * d + CountHeadParams(HeadKind::kLinear, d, hidden, num_classes);
        b.macs += static_cast<std::uint64_t>(d) * num_classes;
        break;
      case MethodKind::kFullFineTune:
      case MethodKind::kLwMlp:
        b.params_touched += 2 * d + CountHeadParams(HeadKind::kMlp, d, hidden, num_classes);
        b.macs += static_cast<std::uint64_t>(d) * hidden + static_cast<std::uint64_t>(hidden) * num_classes;
        break;
      case MethodKind::kAccumulator: {
        b.params_touched += d + (exit + 1) * d + acc.depth * block +
                            CountHeadParams(acc.head_kind, d, hidden, num_classes);
        const std::size_t first = acc.tap_tokenizer ? 0 : 1;
        for (std::size_t layer = first; layer <= exit; ++layer) {
          b.macs += acc.depth * BlockMacs(layer + 2, d, hidden);
        }
        b.macs += acc.head_kind == HeadKind::kMlp
                      ? static_cast<std::uint64_t>(d) * hidden + static_cast<std::uint64_t>(hidden) * num_classes
                      : static_cast<std::uint64_t>(d) * num_classes;
        break;
      }
    }
    out.push_back(b);
  }
  return out;
}

#define FEDACC_INSTANTIATE_ADAPTERS(T)                                                      \
  template struct AccumulatorParams<T>;                                                     \
  template struct HeadParams<T>;                                                            \
  template struct ParallelAdapterParams<T>;                                                 \
  template Var<T> Accumulate<T>(Tape<T>&, const AccumulatorParams<T>&, std::span<const Var<T>>); \
  template Var<T> ReplacementToken<T>(Var<T>);                                              \
  template Var<T> PredictAtExit<T>(Tape<T>&, const AccumulatorParams<T>&, const HeadParams<T>&, \
                                   Var<T>, Var<T>);

FEDACC_INSTANTIATE_ADAPTERS(float)
FEDACC_INSTANTIATE_ADAPTERS(double)

#undef FEDACC_INSTANTIATE_ADAPTERS

}  // namespace fedacc
