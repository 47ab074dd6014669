// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "fedacc/adapters/model.hpp"
#include "fedacc/numerics/ops.hpp"

namespace fedacc {
namespace {

Tensor<float> Noise(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor<float> t(shape);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

void BM_MatMul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = Noise({n, n}, 1), b = Noise({n, n}, 2);
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(ops::MatMul(tape.Constant(a), tape.Constant(b)).value().ptr());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_MatMul)->Arg(32)->Arg(128)->Arg(384);

void BM_AttentionBackward(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  Parameter<float> qkv("qkv", Noise({10, tokens, 96}, 3));
  for (auto _ : state) {
    Tape<float> tape;
    tape.Backward(ops::Sum(ops::Attention(tape.Param(qkv), 4)));
    qkv.ZeroGrad();
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(6)->Arg(17);

void BM_ToyForward(benchmark::State& state) {
  const auto cfg = BackboneConfig::Toy();
  auto bb = std::make_shared<Backbone<float>>(Backbone<float>::Init(cfg, 4));
  bb->Freeze();
  ModelOptions opts;
  opts.method.kind = static_cast<MethodKind>(state.range(0));
  const auto model = Model<float>::Create(bb, opts, 5);
  const auto images = Noise({256, 1, 16, 16}, 6);
  const std::size_t exits[] = {1, 2, 3, 4};
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(ForwardExits(tape, model, images, std::span<const std::size_t>(exits)).logits.size());
  }
  state.SetLabel(std::string(ToString(opts.method.kind)));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_ToyForward)->DenseRange(0, 3);

}  // namespace
}  // namespace fedacc
