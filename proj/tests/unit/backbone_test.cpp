// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fedacc/backbone/backbone.hpp"
#include "fedacc/numerics/ops.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace fedacc {
namespace {

using testing::FrozenBackbone;
using testing::RandomImages;
using testing::TinyBackboneConfig;

TEST_CASE("toy tokenizer yields 17 tokens of width 32") {
  const auto cfg = BackboneConfig::Toy();
  CHECK(cfg.seq_len() == 17);
  auto bb = FrozenBackbone<float>(cfg, 1);
  std::mt19937_64 rng(2);
  Tape<float> tape(false);
  auto out = ForwardWithTaps(tape, *bb, RandomImages<float>(cfg, 3, rng), 1);
  CHECK(out.tokens.shape() == Shape{3, 17, 32});
  REQUIRE(out.trace.size() == 2);
  CHECK(out.trace[0].shape() == Shape{3, 32});
}

TEST_CASE("trace has one entry per executed stage") {
  const auto cfg = TinyBackboneConfig();
  auto bb = FrozenBackbone(cfg, 3);
  std::mt19937_64 rng(4);
  const auto images = RandomImages(cfg, 2, rng);
  for (std::size_t upto = 1; upto <= cfg.depth; ++upto) {
    Tape<double> tape(false);
    CHECK(ForwardWithTaps(tape, *bb, images, upto).trace.size() == upto + 1);
  }
  Tape<double> tape(false);
  CHECK_THROWS_AS(ForwardWithTaps(tape, *bb, images, 0), Error);
}

TEST_CASE("patchify orders patches row-major") {
  Tensor<double> img({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
  const auto p = Patchify(img, 2);
  CHECK(p.shape() == Shape{1, 4, 4});
  const std::vector<double> first{0, 1, 4, 5}, second{2, 3, 6, 7};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(p[i] == first[i]);
    CHECK(p[4 + i] == second[i]);
  }
}

TEST_CASE("parameter count matches the term-by-term oracle") {
  for (const auto& cfg : {BackboneConfig::Toy(), TinyBackboneConfig()}) {
    CHECK(CountBackboneParams(cfg) == testing::BackboneCountOracle(cfg));
    CHECK(Backbone<double>::Init(cfg, 0).NumParams() == CountBackboneParams(cfg));
  }
  const auto deit = BackboneConfig::DeitSmallShape();
  CHECK(CountBackboneParams(deit) == testing::BackboneCountOracle(deit));
  // 22,050,664 for the reference layout minus its 1000-way head.
  CHECK(CountBackboneParams(deit) == 21665664);
}

TEST_CASE("count is affine in depth") {
  auto cfg = BackboneConfig::Toy();
  std::vector<std::size_t> counts;
  for (std::size_t l = 1; l <= 4; ++l) {
    cfg.depth = l;
    counts.push_back(CountBackboneParams(cfg));
  }
  for (std::size_t i = 2; i < counts.size(); ++i)
    CHECK(counts[i] - counts[i - 1] == counts[1] - counts[0]);
}

TEST_CASE("invalid configurations are rejected") {
  auto cfg = BackboneConfig::Toy();
  cfg.depth = 0;
  CHECK_THROWS_AS(cfg.Validate(), Error);
  cfg = BackboneConfig::Toy();
  cfg.num_heads = 5;
  CHECK_THROWS_AS(cfg.Validate(), Error);
  cfg = BackboneConfig::Toy();
  cfg.patch_size = 5;
  CHECK_THROWS_AS(cfg.Validate(), Error);
}

TEST_CASE("a tap returning nothing leaves the forward untouched") {
  const auto cfg = TinyBackboneConfig();
  auto bb = FrozenBackbone(cfg, 5);
  std::mt19937_64 rng(6);
  const auto images = RandomImages(cfg, 2, rng);
  Tape<double> a(false), b(false);
  const auto plain = ForwardWithTaps(a, *bb, images, cfg.depth);
  std::size_t calls = 0;
  const auto tapped = ForwardWithTaps(b, *bb, images, cfg.depth,
                                      ClsTap<double>([&](std::size_t, const ClsTrace<double>&) {
                                        ++calls;
                                        return std::optional<Var<double>>{};
                                      }));
  CHECK(calls == cfg.depth);
  CHECK(plain.tokens.value() == tapped.tokens.value());
}

TEST_CASE("replacing the class token at layer l only touches later stages") {
  const auto cfg = TinyBackboneConfig();
  auto bb = FrozenBackbone(cfg, 7);
  std::mt19937_64 rng(8);
  const auto images = RandomImages(cfg, 2, rng);
  Tape<double> a(false), b(false);
  const auto plain = ForwardWithTaps(a, *bb, images, cfg.depth);
  const std::size_t at = 1;
  const auto replaced = ForwardWithTaps(
      b, *bb, images, cfg.depth, ClsTap<double>([&](std::size_t layer, const ClsTrace<double>&) {
        if (layer != at) return std::optional<Var<double>>{};
        return std::optional(b.Constant(Tensor<double>({2, cfg.embed_dim}, 0.25)));
      }));
  for (std::size_t l = 0; l <= at; ++l) CHECK(plain.trace[l].value() == replaced.trace[l].value());
  CHECK_FALSE(plain.trace[at + 1].value() == replaced.trace[at + 1].value());
}

TEST_CASE("pretraining with zero epochs returns the frozen initialization") {
  const auto cfg = TinyBackboneConfig();
  SynthSpec spec;
  spec.num_classes = 3;
  spec.n = 30;
  spec.side = cfg.image_side;
  PretrainOptions opts;
  opts.epochs = 0;
  opts.accuracy_floor = 0.0;
  const auto res = PretrainBackbone<double>(cfg, SynthDataset(spec), opts, 11);
  const auto init = Backbone<double>::Init(cfg, 11);
  CHECK(res.backbone.pos_embed.value == init.pos_embed.value);
  CHECK(res.epoch_losses.empty());
  VisitParams(res.backbone, [](const Parameter<double>& p) { CHECK_FALSE(p.trainable); });
}

TEST_CASE("pretraining is deterministic under its seed") {
  const auto cfg = TinyBackboneConfig();
  SynthSpec spec;
  spec.num_classes = 3;
  spec.n = 60;
  spec.side = cfg.image_side;
  PretrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 8;
  opts.accuracy_floor = 0.0;
  const auto data = SynthDataset(spec);
  const auto a = PretrainBackbone<double>(cfg, data, opts, 12);
  const auto b = PretrainBackbone<double>(cfg, data, opts, 12);
  CHECK(a.epoch_losses == b.epoch_losses);
  CHECK(a.backbone.blocks[0].qkv.weight.value == b.backbone.blocks[0].qkv.weight.value);
  CHECK_FALSE(a.backbone.blocks[0].qkv.weight.value ==
              Backbone<double>::Init(cfg, 12).blocks[0].qkv.weight.value);
}

}  // namespace
}  // namespace fedacc
