// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/backbone/backbone.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "fedacc/log.hpp"
#include "fedacc/numerics/optim.hpp"
#include "fedacc/numerics/rng.hpp"

namespace fedacc {

BackboneConfig BackboneConfig::Toy() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::DeitSmallShape() {
  BackboneConfig c;
  c.depth = 12;
  c.embed_dim = 384;
  c.num_heads = 6;
  c.mlp_ratio = 4;
  c.patch_size = 16;
  c.image_side = 224;
  c.channels = 3;
  c.pretrain_classes = 1000;
  return c;
}

void BackboneConfig::Validate() const {
  std::ostringstream problems;
  if (depth == 0) problems << " depth must be >= 1;";
  if (embed_dim == 0) problems << " embed_dim must be >= 1;";
  if (num_heads == 0 || (embed_dim % num_heads) != 0) {
    problems << " embed_dim must be divisible by num_heads;";
  }
  if (mlp_ratio == 0) problems << " mlp_ratio must be >= 1;";
  if (patch_size == 0 || image_side == 0 || (image_side % patch_size) != 0) {
    problems << " image_side must be a positive multiple of patch_size;";
  }
  if (channels == 0) problems << " channels must be >= 1;";
  if (pretrain_classes < 2) problems << " pretrain_classes must be >= 2;";
  if (!problems.str().empty()) {
    throw Error(ErrorKind::kConfig, "backbone config:" + problems.str());
  }
}

std::size_t BackboneConfig::num_patches() const {
  const std::size_t grid = image_side / patch_size;
  return grid * grid;
}

std::size_t CountBackboneParams(const BackboneConfig& c) {
  c.Validate();
  const std::size_t d = c.embed_dim;
  return c.patch_dim() * d + d                                   // tokenizer
         + c.seq_len() * d                                        // positional embedding
         + d                                                      // class token
         + c.depth * BlockParams<double>::CountParams(d, c.mlp_ratio)
         + 2 * d;                                                 // final norm
}

template <typename T>
Backbone<T> Backbone<T>::Init(const BackboneConfig& config, std::uint64_t seed) {
  config.Validate();
  std::mt19937_64 rng = MakeRng(seed, {0xbb});
  const std::size_t d = config.embed_dim;
  Backbone b;
  b.config = config;
  b.patch_embed = LinearParams<T>::Make("backbone.patch_embed", config.patch_dim(), d,
                                        Init::kXavierUniform, 0, rng);
  b.pos_embed = Parameter<T>("backbone.pos_embed",
                             InitTensor<T>({config.seq_len(), d}, Init::kTruncNormal, 0.02, rng));
  b.cls_token = Parameter<T>("backbone.cls_token",
                             InitTensor<T>({d}, Init::kTruncNormal, 0.02, rng));
  for (std::size_t l = 0; l < config.depth; ++l) {
    b.blocks.push_back(BlockParams<T>::Make("backbone.blocks." + std::to_string(l), d,
                                            config.num_heads, config.mlp_ratio, rng));
  }
  b.final_norm = LayerNormParams<T>::Make("backbone.norm", d);
  return b;
}

template <typename T>
Tensor<T> Patchify(const Tensor<T>& images, std::size_t patch_size) {
  if (images.rank() != 4 || images.dim(2) != images.dim(3) || patch_size == 0 ||
      images.dim(2) % patch_size != 0) {
    throw Error(ErrorKind::kShape, "patchify: cannot split " + ShapeToString(images.shape()) +
                                       " into " + std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t batch = images.dim(0), channels = images.dim(1), side = images.dim(2);
  const std::size_t grid = side / patch_size;
  const std::size_t patch_dim = channels * patch_size * patch_size;
  Tensor<T> out({batch, grid * grid, patch_dim});
  T* dst = out.ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t py = 0; py < patch_size; ++py) {
            const T* row = images.ptr() + ((b * channels + c) * side + gy * patch_size + py) * side +
                           gx * patch_size;
            dst = std::copy_n(row, patch_size, dst);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
TapOutput<T> ForwardWithTaps(Tape<T>& tape, const Backbone<T>& backbone,
                             const Tensor<T>& images, std::size_t upto_layer,
                             const ClsTap<T>& tap, const BlockSideBranch<T>& side) {
  const BackboneConfig& cfg = backbone.config;
  if (upto_layer < 1 || upto_layer > cfg.depth) {
    throw Error(ErrorKind::kConfig, "forward: upto_layer " + std::to_string(upto_layer) +
                                        " outside [1, " + std::to_string(cfg.depth) + "]");
  }
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_side) {
    throw Error(ErrorKind::kShape, "forward: images " + ShapeToString(images.shape()) +
                                       " do not match backbone input [B, " +
                                       std::to_string(cfg.channels) + ", " +
                                       std::to_string(cfg.image_side) + ", " +
                                       std::to_string(cfg.image_side) + "]");
  }
  const std::size_t batch = images.dim(0);
  const std::size_t d = cfg.embed_dim;

  Var<T> patches = tape.Constant(Patchify(images, cfg.patch_size));
  Var<T> tokens = backbone.patch_embed.Forward(tape, patches);
  Var<T> cls = ops::Reshape(ops::BroadcastBatch(tape.Param(backbone.cls_token), batch),
                            Shape{batch, 1, d});
  Var<T> z = ops::AddBroadcast(ops::ConcatTokens(cls, tokens), tape.Param(backbone.pos_embed));

  TapOutput<T> out;
  auto apply_tap = [&](std::size_t layer) {
    if (!tap) return;
    std::optional<Var<T>> replacement = tap(layer, out.trace);
    if (!replacement) return;
    if (replacement->shape() != Shape{batch, d}) {
      throw Error(ErrorKind::kShape, "forward: replacement token at layer " +
                                         std::to_string(layer) + " has shape " +
                                         ShapeToString(replacement->shape()) + ", expected " +
                                         ShapeToString(Shape{batch, d}));
    }
    z = ops::ReplaceToken(z, 0, *replacement);
  };

  out.trace.push_back(ops::SelectToken(z, 0));
  apply_tap(0);
  for (std::size_t l = 1; l <= upto_layer; ++l) {
    MlpSideBranch<T> branch;
    if (side) branch = [&side, l](Var<T> normed) { return side(l - 1, normed); };
    z = backbone.blocks[l - 1].Forward(tape, z, branch);
    out.trace.push_back(ops::SelectToken(z, 0));
    if (l < upto_layer) apply_tap(l);
  }
  out.tokens = z;
  return out;
}

namespace {

template <typename T>
double HoldoutAccuracy(const Backbone<T>& backbone, const LinearParams<T>& head,
                       const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    auto chunk = indices.subspan(start, std::min(kChunk, indices.size() - start));
    Tape<T> tape(false);
    auto fwd = ForwardWithTaps(tape, backbone, GatherImages<T>(data, chunk),
                               backbone.config.depth);
    Var<T> logits = head.Forward(tape, backbone.final_norm.Forward(tape, fwd.trace.back()));
    const auto& lv = logits.value();
    const std::size_t classes = lv.dim(1);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const T* row = lv.ptr() + r * classes;
      const auto pred = static_cast<int>(std::max_element(row, row + classes) - row);
      if (pred == data.labels[chunk[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace

template <typename T>
PretrainResult<T> PretrainBackbone(const BackboneConfig& config, const Dataset& data,
                                   const PretrainOptions& options, std::uint64_t seed) {
  config.Validate();
  if (data.size() == 0) throw Error(ErrorKind::kConfig, "pretrain: empty dataset");
  data.Validate();
  if (static_cast<std::size_t>(data.num_classes) != config.pretrain_classes) {
    throw Error(ErrorKind::kConfig, "pretrain: dataset has " + std::to_string(data.num_classes) +
                                        " classes, backbone expects " +
                                        std::to_string(config.pretrain_classes));
  }
  PretrainResult<T> result{Backbone<T>::Init(config, seed), 0.0, {}};
  Backbone<T>& backbone = result.backbone;
  std::mt19937_64 rng = MakeRng(seed, {0x9e7});
  LinearParams<T> head = LinearParams<T>::Make("pretrain_head", config.embed_dim,
                                               config.pretrain_classes, Init::kXavierUniform,
                                               0, rng);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_holdout = static_cast<std::size_t>(
      std::clamp(options.holdout_fraction, 0.0, 0.9) * static_cast<double>(data.size()));
  std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_holdout), order.end());

  if (options.epochs > 0 && !train.empty()) {
    ParamRefs<T> params = MutableParams<T>(backbone);
    for (Parameter<T>* p : MutableParams<T>(head)) params.push_back(p);
    const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
    const std::size_t steps_per_epoch = (train.size() + bs - 1) / bs;
    SgdConfig sched{options.lr, 0.0, options.momentum,
                    static_cast<std::int64_t>(options.epochs * steps_per_epoch)};
    sched.Validate();
    Sgd<T> sgd(options.momentum);
    std::int64_t step = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
      std::shuffle(train.begin(), train.end(), rng);
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < train.size(); start += bs) {
        std::span<const std::size_t> batch(train.data() + start, std::min(bs, train.size() - start));
        Tape<T> tape;
        auto fwd = ForwardWithTaps(tape, backbone, GatherImages<T>(data, batch), config.depth);
        Var<T> logits = head.Forward(tape, backbone.final_norm.Forward(tape, fwd.trace.back()));
        const auto labels = GatherLabels(data, batch);
        Var<T> loss = ops::CrossEntropy(logits, std::span<const int>(labels));
        loss_sum += static_cast<double>(loss.value()[0]);
        tape.Backward(loss);
        sgd.Step(params, LrAt(step++, sched));
      }
      result.epoch_losses.push_back(loss_sum / static_cast<double>(steps_per_epoch));
    }
  }
  backbone.Freeze();
  result.holdout_accuracy = HoldoutAccuracy(backbone, head, data, holdout);
  if (result.holdout_accuracy < options.accuracy_floor) {
    log::Warn("pretrain: holdout accuracy " + std::to_string(result.holdout_accuracy) +
              " below floor " + std::to_string(options.accuracy_floor));
  }
  return result;
}

template struct Backbone<float>;
template struct Backbone<double>;
template Tensor<float> Patchify<float>(const Tensor<float>&, std::size_t);
template Tensor<double> Patchify<double>(const Tensor<double>&, std::size_t);
template TapOutput<float> ForwardWithTaps<float>(Tape<float>&, const Backbone<float>&,
                                                 const Tensor<float>&, std::size_t,
                                                 const ClsTap<float>&,
                                                 const BlockSideBranch<float>&);
template TapOutput<double> ForwardWithTaps<double>(Tape<double>&, const Backbone<double>&,
                                                   const Tensor<double>&, std::size_t,
                                                   const ClsTap<double>&,
                                                   const BlockSideBranch<double>&);
template PretrainResult<float> PretrainBackbone<float>(const BackboneConfig&, const Dataset&,
                                                       const PretrainOptions&, std::uint64_t);
template PretrainResult<double> PretrainBackbone<double>(const BackboneConfig&, const Dataset&,
                                                         const PretrainOptions&, std::uint64_t);

}  // namespace fedacc
