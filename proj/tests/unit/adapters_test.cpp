// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fedacc/adapters/model.hpp"
#include "fedacc/numerics/ops.hpp"
#include "fixtures.hpp"

namespace fedacc {
namespace {

using testing::ExitLogitsAt;
using testing::FrozenBackbone;
using testing::RandomImages;
using testing::TinyBackboneConfig;

ModelOptions Options(MethodKind kind, bool with_pa = false) {
  ModelOptions o;
  o.method = {kind, with_pa};
  o.num_classes = 4;
  return o;
}

std::vector<Var<double>> RandomTrace(Tape<double>& tape, std::size_t n, std::size_t batch,
                                     std::size_t d, std::mt19937_64& rng) {
  std::vector<Var<double>> trace;
  for (std::size_t i = 0; i < n; ++i) trace.push_back(tape.Constant(testing::RandomTensor({batch, d}, rng)));
  return trace;
}

TEST_CASE("accumulator output length is history plus client token") {
  const auto cfg = TinyBackboneConfig();
  std::mt19937_64 rng(1);
  const auto acc = AccumulatorParams<double>::Make(cfg, {}, rng);
  for (std::size_t n = 1; n <= cfg.depth + 1; ++n) {
    Tape<double> tape(false);
    auto trace = RandomTrace(tape, n, 2, cfg.embed_dim, rng);
    auto h = Accumulate(tape, acc, std::span<const Var<double>>(trace));
    CHECK(h.shape() == Shape{2, n + 1, cfg.embed_dim});
    auto r = ReplacementToken(h);
    CHECK(r.shape() == Shape{2, cfg.embed_dim});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t j = 0; j < cfg.embed_dim; ++j)
        CHECK(r.value()[b * cfg.embed_dim + j] == h.value()[(b * (n + 1) + n) * cfg.embed_dim + j]);
  }
}

TEST_CASE("accumulator rejects empty or overlong histories") {
  const auto cfg = TinyBackboneConfig();
  std::mt19937_64 rng(2);
  const auto acc = AccumulatorParams<double>::Make(cfg, {}, rng);
  Tape<double> tape(false);
  std::vector<Var<double>> empty;
  CHECK_THROWS_AS(Accumulate(tape, acc, std::span<const Var<double>>(empty)), Error);
  auto too_long = RandomTrace(tape, cfg.depth + 2, 1, cfg.embed_dim, rng);
  CHECK_THROWS_AS(Accumulate(tape, acc, std::span<const Var<double>>(too_long)), Error);
}

TEST_CASE("zeroed blocks pass the input sequence through") {
  const auto cfg = TinyBackboneConfig();
  std::mt19937_64 rng(3);
  auto acc = AccumulatorParams<double>::Make(cfg, {}, rng);
  for (auto& block : acc.blocks) {
    block.proj.weight.value.Fill(0);
    block.proj.bias.value.Fill(0);
    block.fc2.weight.value.Fill(0);
    block.fc2.bias.value.Fill(0);
  }
  acc.layer_pos.value.Fill(0);
  Tape<double> tape(false);
  auto trace = RandomTrace(tape, 2, 1, cfg.embed_dim, rng);
  auto h = Accumulate(tape, acc, std::span<const Var<double>>(trace));
  const std::size_t d = cfg.embed_dim;
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(h.value()[j] == acc.client_token.value[j]);
    CHECK(h.value()[d + j] == trace[0].value()[j]);
    CHECK(h.value()[2 * d + j] == trace[1].value()[j]);
  }
}

TEST_CASE("zero head predicts class 0 everywhere") {
  const auto cfg = TinyBackboneConfig();
  auto model = Model<double>::Create(FrozenBackbone(cfg, 4), Options(MethodKind::kAccumulator), 5);
  for (Parameter<double>* p : MutableParams<double>(*model.shared_head)) p->value.Fill(0);
  std::mt19937_64 rng(6);
  const auto images = RandomImages(cfg, 5, rng);
  for (std::size_t e = 1; e <= cfg.depth; ++e) {
    const auto logits = ExitLogitsAt(model, images, e);
    for (double v : logits.data()) CHECK(v == 0.0);
    for (int y : ArgmaxRows(logits)) CHECK(y == 0);
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  Tensor<double> t({3, 3}, std::vector<double>{1, 1, 0, 0, 2, 2, 3, 1, 3});
  CHECK(ArgmaxRows(t) == std::vector<int>{0, 1, 0});
}

TEST_CASE("an untouched parallel adapter is inert") {
  const auto cfg = TinyBackboneConfig();
  auto bb = FrozenBackbone(cfg, 7);
  auto with = Model<double>::Create(bb, Options(MethodKind::kLwLinear, true), 8);
  auto without = Model<double>::Create(bb, Options(MethodKind::kLwLinear, false), 8);
  without.layerwise = with.layerwise;
  std::mt19937_64 rng(9);
  const auto images = RandomImages(cfg, 3, rng);
  CHECK(ExitLogitsAt(with, images, cfg.depth) == ExitLogitsAt(without, images, cfg.depth));

  // Non-zero up-projections but s = 0: still inert.
  for (auto& up : with.parallel_adapter->up) testing::Randomize(up.weight, rng);
  with.parallel_adapter->scale = 0.0;
  CHECK(ExitLogitsAt(with, images, cfg.depth) == ExitLogitsAt(without, images, cfg.depth));
  with.parallel_adapter->scale = 1.0;
  CHECK_FALSE(ExitLogitsAt(with, images, cfg.depth) == ExitLogitsAt(without, images, cfg.depth));
}

TEST_CASE("counts at the reference shape") {
  const auto deit = BackboneConfig::DeitSmallShape();
  const std::size_t c = 100;
  CHECK(CountTrainableParams({MethodKind::kLwLinear}, deit, c) == 462000);
  // 12 heads of 384 -> 1536 -> 100.
  CHECK(CountTrainableParams({MethodKind::kLwMlp}, deit, c) == 12 * (384 * 1536 + 1536 + 1536 * 100 + 100));
  CHECK(CountTrainableParams({MethodKind::kLwMlp}, deit, c) == 8940720);
  ParallelAdapterOptions pa;
  pa.rank = 64;
  CHECK(CountParallelAdapterParams(deit, pa) == 595200);
  CHECK(CountTrainableParams({MethodKind::kFullFineTune}, deit, c) == 21665664 + 8940720);
  const double fft = static_cast<double>(CountTrainableParams({MethodKind::kFullFineTune}, deit, c));
  CHECK(std::abs(fft - 30.62e6) / 30.62e6 < 0.005);
  // client token + 13 positional rows + one block.
  CHECK(CountAccumulatorParams(deit, {}) == 384 + 13 * 384 + (12 * 384 * 384 + 13 * 384));
}

TEST_CASE("client token is d scalars") {
  const auto cfg = TinyBackboneConfig();
  std::mt19937_64 rng(10);
  CHECK(AccumulatorParams<double>::Make(cfg, {}, rng).client_token.size() == cfg.embed_dim);
}

TEST_CASE("symbolic counts agree with instantiated models") {
  const auto cfg = TinyBackboneConfig();
  auto bb = FrozenBackbone(cfg, 11);
  for (auto kind : {MethodKind::kFullFineTune, MethodKind::kLwLinear, MethodKind::kLwMlp,
                    MethodKind::kAccumulator}) {
    for (bool pa : {false, true}) {
      CAPTURE(ToString(kind));
      CAPTURE(pa);
      const auto opts = Options(kind, pa);
      const auto model = Model<double>::Create(bb, opts, 12);
      CHECK(model.NumTrainable() == CountTrainableParams(opts.method, cfg, opts.num_classes,
                                                         opts.accumulator, opts.parallel_adapter));
    }
  }
}

TEST_CASE("three accumulator blocks triple the block parameters") {
  const auto cfg = TinyBackboneConfig();
  AccumulatorOptions one, three;
  three.depth = 3;
  const std::size_t block = BlockParams<double>::CountParams(cfg.embed_dim, cfg.mlp_ratio);
  CHECK(CountAccumulatorParams(cfg, three) - CountAccumulatorParams(cfg, one) == 2 * block);
  std::mt19937_64 rng(13);
  const auto acc = AccumulatorParams<double>::Make(cfg, three, rng);
  CHECK(acc.blocks.size() == 3);
  CHECK(CountParams<double>(acc) == CountAccumulatorParams(cfg, three));
  AccumulatorOptions zero;
  zero.depth = 0;
  CHECK_THROWS_AS(AccumulatorParams<double>::Make(cfg, zero, rng), Error);
}

TEST_CASE("accumulator exits share one head") {
  const auto cfg = TinyBackboneConfig();
  const auto model = Model<double>::Create(FrozenBackbone(cfg, 14), Options(MethodKind::kAccumulator), 15);
  CHECK(model.shared_head.has_value());
  CHECK_FALSE(model.layerwise.has_value());
  const auto lw = Model<double>::Create(model.backbone, Options(MethodKind::kLwMlp), 15);
  REQUIRE(lw.layerwise.has_value());
  CHECK(lw.layerwise->heads.size() == cfg.depth);
}

TEST_CASE("exit l ignores everything past l") {
  const auto cfg = TinyBackboneConfig();
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 5; ++trial) {
    auto bb = std::make_shared<Backbone<double>>(Backbone<double>::Init(cfg, rng()));
    bb->Freeze();
    auto model = Model<double>::Create(bb, Options(MethodKind::kAccumulator), rng());
    testing::RandomizeAll<double>(*model.accumulator, rng, 0.3);
    const auto images = RandomImages(cfg, 2, rng);
    const std::size_t l = 1 + trial % (cfg.depth - 1);
    const auto before = ExitLogitsAt(model, images, l);
    for (std::size_t j = l; j < cfg.depth; ++j) testing::RandomizeAll<double>(bb->blocks[j], rng);
    auto& pos = model.accumulator->layer_pos.value;
    for (std::size_t i = (l + 1) * cfg.embed_dim; i < pos.size(); ++i) pos[i] = 7.0 * (i % 3);
    CHECK(ExitLogitsAt(model, images, l) == before);
  }
}

TEST_CASE("without replacement the backbone stream is unadapted") {
  const auto cfg = TinyBackboneConfig();
  auto bb = FrozenBackbone(cfg, 17);
  auto opts = Options(MethodKind::kAccumulator);
  opts.accumulator.replace = false;
  const auto model = Model<double>::Create(bb, opts, 18);
  std::mt19937_64 rng(19);
  const auto images = RandomImages(cfg, 3, rng);
  Tape<double> a(false), b(false);
  const auto plain = ForwardWithTaps(a, *bb, images, cfg.depth);
  std::vector<std::size_t> exits(cfg.depth);
  for (std::size_t e = 0; e < cfg.depth; ++e) exits[e] = e + 1;
  const auto adapted = ForwardExits(b, model, images, std::span<const std::size_t>(exits));
  REQUIRE(adapted.trace.size() == plain.trace.size());
  for (std::size_t l = 0; l < plain.trace.size(); ++l) CHECK(adapted.trace[l].value() == plain.trace[l].value());

  opts.accumulator.replace = true;
  const auto replacing = Model<double>::Create(bb, opts, 18);
  Tape<double> c(false);
  const auto changed = ForwardExits(c, replacing, images, std::span<const std::size_t>(exits));
  CHECK_FALSE(changed.trace.back().value() == plain.trace.back().value());
}

TEST_CASE("disabling the residual changes predictions") {
  const auto cfg = TinyBackboneConfig();
  auto bb = FrozenBackbone(cfg, 20);
  auto opts = Options(MethodKind::kAccumulator);
  const auto with = Model<double>::Create(bb, opts, 21);
  opts.accumulator.residual = false;
  const auto without = Model<double>::Create(bb, opts, 21);
  std::mt19937_64 rng(22);
  const auto images = RandomImages(cfg, 2, rng);
  CHECK_FALSE(ExitLogitsAt(with, images, 2) == ExitLogitsAt(without, images, 2));
}

TEST_CASE("trainable state roundtrips and rejects schema drift") {
  const auto cfg = TinyBackboneConfig();
  auto model = Model<double>::Create(FrozenBackbone(cfg, 23), Options(MethodKind::kAccumulator), 24);
  auto state = model.TrainableState();
  auto other = Model<double>::Create(model.backbone, Options(MethodKind::kAccumulator), 25);
  other.LoadTrainableState(state);
  CHECK(other.TrainableState() == state);
  auto renamed = state;
  auto node = renamed.extract(renamed.begin());
  node.key() = "nope";
  renamed.insert(std::move(node));
  try {
    other.LoadTrainableState(renamed);
    FAIL("expected schema mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSchemaMismatch);
  }
}

TEST_CASE("clones do not alias trainable state") {
  const auto cfg = TinyBackboneConfig();
  for (auto kind : {MethodKind::kAccumulator, MethodKind::kFullFineTune}) {
    auto model = Model<double>::Create(FrozenBackbone(cfg, 26), Options(kind), 27);
    auto copy = model.Clone();
    const auto before = model.TrainableState();
    for (Parameter<double>* p : copy.TrainableParams()) p->value.Fill(1.5);
    CHECK(model.TrainableState() == before);
  }
}

TEST_CASE("exit budgets grow with depth") {
  const auto deit = BackboneConfig::DeitSmallShape();
  for (auto kind : {MethodKind::kFullFineTune, MethodKind::kLwLinear, MethodKind::kLwMlp,
                    MethodKind::kAccumulator}) {
    const auto budgets = EstimateExitBudgets({kind}, deit, 100);
    REQUIRE(budgets.size() == deit.depth);
    for (std::size_t i = 1; i < budgets.size(); ++i) {
      CHECK(budgets[i].params_touched > budgets[i - 1].params_touched);
      CHECK(budgets[i].macs > budgets[i - 1].macs);
    }
  }
}

TEST_CASE("method and head names parse") {
  for (auto kind : {MethodKind::kFullFineTune, MethodKind::kLwLinear, MethodKind::kLwMlp,
                    MethodKind::kAccumulator})
    CHECK(ParseMethodKind(ToString(kind)) == kind);
  CHECK(ParseHeadKind("linear") == HeadKind::kLinear);
  CHECK_THROWS_AS(ParseMethodKind("adapterfusion"), Error);
  ParallelAdapterOptions pa;
  CHECK(pa.ResolvedRank(32) == 5);
  CHECK(pa.ResolvedRank(8) == 4);
}

}  // namespace
}  // namespace fedacc
