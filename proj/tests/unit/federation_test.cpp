// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "fedacc/federation/federation.hpp"
#include "fedacc/numerics/ops.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace fedacc {
namespace {

using testing::FrozenBackbone;
using testing::TinyBackboneConfig;

Dataset TinyData(std::size_t n, std::uint64_t seed) {
  SynthSpec spec;
  spec.num_classes = 4;
  spec.n = n;
  spec.side = TinyBackboneConfig().image_side;
  spec.label_map_seed = 40;
  spec.noise_seed = seed;
  return SynthDataset(spec);
}

Model<double> TinyModel(MethodKind kind, bool with_pa = false) {
  ModelOptions o;
  o.method = {kind, with_pa};
  o.num_classes = 4;
  return Model<double>::Create(FrozenBackbone(TinyBackboneConfig(), 50), o, 51);
}

ClientShard AllOf(const Dataset& ds) {
  ClientShard s;
  s.indices.resize(ds.size());
  std::iota(s.indices.begin(), s.indices.end(), 0);
  return s;
}

NamedTensors<double> OneParam(std::vector<double> v) {
  const std::size_t n = v.size();
  return {{"w", Tensor<double>({n}, std::move(v))}};
}

TEST_CASE("client sampling") {
  const auto s = SampleClients(100, 0.1, 3, 9);
  CHECK(s.size() == 10);
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 10);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(SampleClients(100, 0.1, 3, 9) == s);
  CHECK_FALSE(SampleClients(100, 0.1, 4, 9) == s);
  CHECK(SampleClients(7, 1.0, 0, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  FederationConfig cfg;
  cfg.num_clients = 40;
  CHECK(cfg.clients_per_round() == 4);
  cfg.sample_fraction = 0.0;
  CHECK_THROWS_AS(cfg.Validate(), Error);
}

TEST_CASE("tiers are balanced and seeded") {
  auto tiers = AssignTiers(12, 4, 1);
  for (std::size_t t = 1; t <= 4; ++t) CHECK(std::count(tiers.begin(), tiers.end(), t) == 3);
  CHECK(AssignTiers(12, 4, 1) == tiers);
  tiers = AssignTiers(10, 4, 2);
  for (std::size_t t = 1; t <= 4; ++t) {
    const auto c = std::count(tiers.begin(), tiers.end(), t);
    CHECK((c == 2 || c == 3));
  }
  CHECK_THROWS_AS(AssignTiers(3, 4, 1), Error);
}

TEST_CASE("profiles per setting") {
  for (const auto& p : MakeProfiles(Setting::kConventional, 5, 4, 0)) {
    CHECK(p.policy.kind == ExitPolicy::Kind::kFixed);
    CHECK(p.policy.max_exit == 4);
  }
  for (const auto& p : MakeProfiles(Setting::kAnytime, 5, 4, 0))
    CHECK(p.policy.kind == ExitPolicy::Kind::kUniformRandom);
  for (const auto& p : MakeProfiles(Setting::kMultiTier, 8, 4, 0)) CHECK(p.policy.max_exit == p.tier);
  CHECK(EvaluatedExits(Setting::kConventional, 4) == std::vector<std::size_t>{4});
  CHECK(EvaluatedExits(Setting::kAnytime, 3) == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("uniform exit draws stay within the binomial band") {
  ExitPolicy policy{ExitPolicy::Kind::kUniformRandom, 4};
  std::mt19937_64 rng(5);
  std::vector<std::size_t> counts(4, 0);
  for (int i = 0; i < 4000; ++i) ++counts.at(policy.Draw(rng) - 1);
  for (std::size_t c : counts) {
    CHECK(c / 4000.0 >= 0.2);
    CHECK(c / 4000.0 <= 0.3);
  }
  ExitPolicy fixed{ExitPolicy::Kind::kFixed, 3};
  CHECK(fixed.Draw(rng) == 3);
}

TEST_CASE("a fixed exit never moves later positional rows") {
  auto model = TinyModel(MethodKind::kAccumulator);
  const auto data = TinyData(40, 1);
  const std::size_t l = 2;
  const std::size_t d = TinyBackboneConfig().embed_dim;

  // Direct gradient check of the corollary.
  {
    Tape<double> tape;
    const std::size_t exits[] = {l};
    const auto idx = AllOf(data).indices;
    auto out = ForwardExits(tape, model, GatherImages<double>(data, idx), std::span<const std::size_t>(exits));
    const auto labels = GatherLabels(data, idx);
    tape.Backward(ops::CrossEntropy(out.logits.front(), std::span<const int>(labels)));
    const auto& g = model.accumulator->layer_pos.grad;
    for (std::size_t i = (l + 1) * d; i < g.size(); ++i) CHECK(g[i] == 0.0);
    for (Parameter<double>* p : model.TrainableParams()) p->ZeroGrad();
  }

  ClientProfile client{0, l, {ExitPolicy::Kind::kFixed, l}};
  LocalConfig cfg;
  cfg.lr = 0.05;
  const auto res = LocalTrain(model, data, AllOf(data), client, cfg, 3);
  CHECK_FALSE(res.failure);
  CHECK(res.num_examples == 40);
  CHECK(res.exit_counts == std::vector<std::size_t>{0, 4, 0});
  const auto& before = model.accumulator->layer_pos.value;
  const auto& after = res.state.at(model.accumulator->layer_pos.name);
  for (std::size_t i = (l + 1) * d; i < before.size(); ++i) CHECK(after[i] == before[i]);
  CHECK_FALSE(after == before);
}

TEST_CASE("zero learning rate returns the global state") {
  for (auto kind : {MethodKind::kAccumulator, MethodKind::kLwMlp, MethodKind::kFullFineTune}) {
    const auto model = TinyModel(kind);
    const auto data = TinyData(25, 2);
    ClientProfile client{0, 3, {ExitPolicy::Kind::kUniformRandom, 3}};
    LocalConfig cfg;
    cfg.lr = 0.0;
    CHECK(LocalTrain(model, data, AllOf(data), client, cfg, 4).state == model.TrainableState());
  }
}

TEST_CASE("fedavg examples") {
  const auto a = OneParam({2.0}), b = OneParam({4.0});
  const WeightedState<double> ups[] = {{&a, 1}, {&b, 3}};
  CHECK(FedAvg<double>(ups).at("w")[0] == 3.5);
  const WeightedState<double> single[] = {{&b, 7}};
  CHECK(FedAvg<double>(single) == b);
}

TEST_CASE("fedavg matches the long double weighted mean") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> size(1, 500);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NamedTensors<double>> states;
    std::vector<std::size_t> weights;
    for (int k = 0; k < 5; ++k) {
      states.push_back({{"a", testing::RandomTensor({7}, rng)}, {"b", testing::RandomTensor({2, 3}, rng, 10.0)}});
      weights.push_back(size(rng));
    }
    std::vector<WeightedState<double>> ups;
    for (int k = 0; k < 5; ++k) ups.push_back({&states[k], weights[k]});
    const auto got = FedAvg<double>(ups);
    const auto want = testing::WeightedMeanOracle(states, weights);
    for (const auto& [name, t] : got)
      for (std::size_t i = 0; i < t.size(); ++i)
        CHECK(std::abs(static_cast<long double>(t[i]) - want.at(name)[i]) <= 1e-12L);
  }
}

TEST_CASE("fedavg of identical updates is bitwise neutral") {
  std::mt19937_64 rng(7);
  const NamedTensors<float> s{{"x", Cast<float>(testing::RandomTensor({13}, rng))}};
  const WeightedState<float> ups[] = {{&s, 3}, {&s, 17}, {&s, 1}};
  CHECK(FedAvg<float>(ups) == s);
}

TEST_CASE("fedavg is invariant to scaling all weights") {
  std::mt19937_64 rng(8);
  const auto a = OneParam({0.1, -2.0}), b = OneParam({5.5, 3.25}), c = OneParam({-1.0, 0.0});
  const WeightedState<double> ups[] = {{&a, 2}, {&b, 5}, {&c, 9}};
  const WeightedState<double> scaled[] = {{&a, 6}, {&b, 15}, {&c, 27}};
  const auto x = FedAvg<double>(ups), y = FedAvg<double>(scaled);
  for (std::size_t i = 0; i < 2; ++i) CHECK(x.at("w")[i] == doctest::Approx(y.at("w")[i]).epsilon(1e-15));
}

TEST_CASE("fedavg commutes with scaling every update") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const double c = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
    std::vector<NamedTensors<double>> states(4), scaled(4);
    std::vector<WeightedState<double>> ups, sups;
    for (int k = 0; k < 4; ++k) {
      states[k]["w"] = testing::RandomTensor({9}, rng);
      scaled[k]["w"] = states[k]["w"];
      for (auto& v : scaled[k]["w"].data()) v *= c;
    }
    for (int k = 0; k < 4; ++k) {
      const std::size_t n = 1 + rng() % 50;
      ups.push_back({&states[k], n});
      sups.push_back({&scaled[k], n});
    }
    const auto x = FedAvg<double>(ups).at("w"), y = FedAvg<double>(sups).at("w");
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(c * x[i] - y[i]) <= 1e-12);
  }
}

TEST_CASE("fedavg names the parameter on schema mismatch") {
  const auto a = OneParam({1.0, 2.0}), b = OneParam({1.0});
  const WeightedState<double> ups[] = {{&a, 1}, {&b, 1}};
  try {
    FedAvg<double>(ups);
    FAIL("expected schema mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSchemaMismatch);
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
}

TEST_CASE("evaluation with a zero head reports the class-0 share") {
  auto model = TinyModel(MethodKind::kAccumulator);
  for (Parameter<double>* p : MutableParams<double>(*model.shared_head)) p->value.Fill(0);
  const auto test = TinyData(37, 9);
  const std::vector<std::size_t> exits{1, 2, 3};
  const auto acc = EvaluateExits(model, test, exits, 8);
  const double share = static_cast<double>(test.ClassCounts()[0]) / static_cast<double>(test.size());
  for (double a : acc.accuracy) CHECK(a == share);
  CHECK(acc.mean == doctest::Approx(share));
}

TEST_CASE("duplicating the test set leaves accuracy unchanged") {
  const auto model = TinyModel(MethodKind::kLwLinear);
  const auto test = TinyData(30, 10);
  std::vector<std::size_t> twice;
  for (int r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < test.size(); ++i) twice.push_back(i);
  const std::vector<std::size_t> exits{1, 2, 3};
  CHECK(EvaluateExits(model, test, exits).accuracy == EvaluateExits(model, test.Subset(twice), exits).accuracy);
}

TEST_CASE("communication accounting") {
  CHECK(CommsCost(90, 30606384, 10, false) == 90ull * 30606384ull);
  CHECK(CommsCost(90, 384, 10, true) == 90ull * 2 * 10 * 384);
  CHECK(FormatComms(90, 30606384) == "90\xC3\x97" "30.61");
  CHECK(FormatComms(500, 462000) == "500\xC3\x97" "0.46");
  CHECK(FormatComms(3, 384) == "3\xC3\x97" "0.000384");
}

TEST_CASE("federated run is thread-count independent and keeps the backbone") {
  const auto train = TinyData(120, 11), test = TinyData(40, 12);
  PartitionSpec part;
  part.num_clients = 8;
  part.alpha = 0.5;
  part.seed = 3;
  const auto shards = Partition(train.labels, 4, part);
  FederationConfig cfg;
  cfg.num_clients = 8;
  cfg.sample_fraction = 0.5;
  cfg.rounds = 4;
  cfg.eval_every = 2;
  cfg.seed = 13;
  SgdConfig sgd;
  sgd.base_lr = 0.05;
  const auto model = TinyModel(MethodKind::kAccumulator);
  const auto backbone_before = model.backbone->blocks[1].fc1.weight.value;

  const auto serial = RunFederated(model, train, shards, test, cfg, sgd);
  cfg.jobs = 4;
  const auto parallel = RunFederated(model, train, shards, test, cfg, sgd);
  CHECK(serial.global.TrainableState() == parallel.global.TrainableState());
  REQUIRE(serial.reports.size() == parallel.reports.size());
  for (std::size_t i = 0; i < serial.reports.size(); ++i) {
    CHECK(serial.reports[i].mean_loss == parallel.reports[i].mean_loss);
    CHECK(serial.reports[i].sampled == parallel.reports[i].sampled);
    CHECK(serial.reports[i].transmitted == serial.reports[i].round * model.NumTrainable());
  }
  CHECK(serial.reports.front().round == 0);
  CHECK(serial.reports.back().eval.has_value());
  CHECK(model.backbone->blocks[1].fc1.weight.value == backbone_before);
  CHECK_FALSE(serial.global.TrainableState() == model.TrainableState());
}

TEST_CASE("client-token personalization touches exactly d scalars") {
  const auto model = TinyModel(MethodKind::kAccumulator);
  const auto train = TinyData(30, 14), holdout = TinyData(30, 15);
  PersonalizeConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.05;
  const auto res = Personalize(model, train, holdout, 3, cfg, 16);
  CHECK(res.trainable == TinyBackboneConfig().embed_dim);
  CHECK(res.changed == TinyBackboneConfig().embed_dim);

  cfg.epochs = 0;
  const auto idle = Personalize(model, train, holdout, 3, cfg, 16);
  CHECK(idle.changed == 0);
  CHECK(idle.after == idle.before);
}

TEST_CASE("full-model personalization leaves the shared backbone alone") {
  const auto model = TinyModel(MethodKind::kAccumulator);
  const auto before = model.backbone->pos_embed.value;
  const auto train = TinyData(20, 17), holdout = TinyData(20, 18);
  PersonalizeConfig cfg;
  cfg.mode = PersonalizeMode::kFullModel;
  cfg.epochs = 1;
  cfg.lr = 0.05;
  const auto res = Personalize(model, train, holdout, 2, cfg, 19);
  CHECK(res.trainable == model.NumTrainable() + model.backbone->NumParams());
  CHECK(model.backbone->pos_embed.value == before);
  CHECK(model.backbone->pos_embed.trainable == false);
}

TEST_CASE("personalization modes must fit the method") {
  const auto lw = TinyModel(MethodKind::kLwLinear);
  CHECK_THROWS_AS(PersonalizedNames(lw, PersonalizeMode::kClientTokenOnly), Error);
  CHECK_THROWS_AS(PersonalizedNames(lw, PersonalizeMode::kPaOnly), Error);
  const auto pa = TinyModel(MethodKind::kAccumulator, true);
  CHECK(PersonalizedNames(pa, PersonalizeMode::kPaOnly).size() == 4 * TinyBackboneConfig().depth);
  CHECK(ParsePersonalizeMode("client_token_only") == PersonalizeMode::kClientTokenOnly);
  CHECK(ParseSetting("multi_tier") == Setting::kMultiTier);
}

}  // namespace
}  // namespace fedacc
