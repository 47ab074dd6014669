// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <numeric>

#include "fedacc/federation/federation.hpp"
#include "fedacc/persistence/checkpoint.hpp"

namespace fedacc {
namespace {

struct Fixture {
  Model<float> model;
  Dataset data;
  ClientShard shard;

  static Fixture Make(MethodKind kind) {
    auto bb = std::make_shared<Backbone<float>>(Backbone<float>::Init(BackboneConfig::Toy(), 1));
    bb->Freeze();
    ModelOptions opts;
    opts.method.kind = kind;
    SynthSpec spec;
    spec.n = 50;
    Fixture f{Model<float>::Create(bb, opts, 2), SynthDataset(spec), {}};
    f.shard.indices.resize(f.data.size());
    std::iota(f.shard.indices.begin(), f.shard.indices.end(), 0);
    return f;
  }
};

// One client round on a 50-example shard (5 batches of 10).
void BM_LocalTrain(benchmark::State& state) {
  const auto f = Fixture::Make(static_cast<MethodKind>(state.range(0)));
  const ClientProfile client{0, 4, {ExitPolicy::Kind::kUniformRandom, 4}};
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(LocalTrain(f.model, f.data, f.shard, client, LocalConfig{}, seed++).mean_loss);
  }
  state.SetLabel(std::string(ToString(f.model.options.method.kind)));
}
BENCHMARK(BM_LocalTrain)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_FedAvg(benchmark::State& state) {
  const auto f = Fixture::Make(MethodKind::kFullFineTune);
  std::vector<NamedTensors<float>> states(static_cast<std::size_t>(state.range(0)), f.model.TrainableState());
  std::vector<WeightedState<float>> ups;
  for (std::size_t i = 0; i < states.size(); ++i) ups.push_back({&states[i], 10 + i});
  for (auto _ : state) benchmark::DoNotOptimize(FedAvg<float>(ups).size());
}
BENCHMARK(BM_FedAvg)->Arg(4)->Arg(10);

void BM_CheckpointRoundtrip(benchmark::State& state) {
  const auto bb = Backbone<float>::Init(BackboneConfig::Toy(), 3);
  const auto ckpt = BackboneCheckpoint(bb);
  for (auto _ : state) benchmark::DoNotOptimize(DecodeCheckpoint(EncodeCheckpoint(ckpt)).tensors.size());
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bb.NumParams() * sizeof(float)));
}
BENCHMARK(BM_CheckpointRoundtrip);

}  // namespace
}  // namespace fedacc
