// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/federation/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <mutex>
#include <set>
#include <thread>

#include "fedacc/numerics/rng.hpp"

namespace fedacc {

std::string_view ToString(Setting s) {
  switch (s) {
    case Setting::kConventional: return "conventional";
    case Setting::kAnytime: return "anytime";
    case Setting::kMultiTier: return "multi_tier";
  }
  return "unknown";
}

Setting ParseSetting(std::string_view name) {
  for (Setting s : {Setting::kConventional, Setting::kAnytime, Setting::kMultiTier}) {
    if (name == ToString(s)) return s;
  }
  throw Error(ErrorKind::kConfig, "unknown setting '" + std::string(name) +
                                      "' (expected conventional, anytime, multi_tier)");
}

std::size_t ExitPolicy::Draw(std::mt19937_64& rng) const {
  if (kind == Kind::kFixed) return max_exit;
  return std::uniform_int_distribution<std::size_t>(1, max_exit)(rng);
}

void FederationConfig::Validate() const {
  std::vector<std::string> problems;
  if (num_clients < 1) problems.push_back("federation.num_clients must be >= 1");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    problems.push_back("federation.sample_fraction must lie in (0, 1]");
  }
  if (local_epochs < 1) problems.push_back("federation.local_epochs must be >= 1");
  if (batch_size < 1) problems.push_back("federation.batch_size must be >= 1");
  if (jobs < 1) problems.push_back("federation.jobs must be >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid federation config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorKind::kConfig, msg);
  }
}

std::size_t FederationConfig::clients_per_round() const {
  const double k = std::ceil(static_cast<double>(num_clients) * sample_fraction - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, num_clients);
}

std::vector<std::size_t> SampleClients(std::size_t num_clients, double fraction,
                                       std::size_t round, std::uint64_t seed) {
  FederationConfig cfg;
  cfg.num_clients = num_clients;
  cfg.sample_fraction = fraction;
  cfg.Validate();
  const std::size_t k = cfg.clients_per_round();
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  auto rng = MakeRng(seed, {0x5a3f, round});
  // Partial Fisher-Yates: the first k slots are a uniform sample.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::size_t> AssignTiers(std::size_t num_clients, std::size_t depth, std::uint64_t seed) {
  if (depth < 1) throw Error(ErrorKind::kConfig, "assign_tiers: depth must be >= 1");
  if (num_clients < depth) {
    throw Error(ErrorKind::kConfig, "assign_tiers: " + std::to_string(num_clients) +
                                        " clients cannot cover " + std::to_string(depth) + " tiers");
  }
  std::vector<std::size_t> tiers(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) tiers[i] = i % depth + 1;
  auto rng = MakeRng(seed, {0x7135});
  std::shuffle(tiers.begin(), tiers.end(), rng);
  return tiers;
}

std::vector<ClientProfile> MakeProfiles(Setting setting, std::size_t num_clients, std::size_t depth,
                                        std::uint64_t seed) {
  std::vector<ClientProfile> out(num_clients);
  std::vector<std::size_t> tiers;
  if (setting == Setting::kMultiTier) tiers = AssignTiers(num_clients, depth, seed);
  for (std::size_t i = 0; i < num_clients; ++i) {
    out[i].id = i;
    switch (setting) {
      case Setting::kConventional:
        out[i].tier = depth;
        out[i].policy = {ExitPolicy::Kind::kFixed, depth};
        break;
      case Setting::kAnytime:
        out[i].tier = depth;
        out[i].policy = {ExitPolicy::Kind::kUniformRandom, depth};
        break;
      case Setting::kMultiTier:
        out[i].tier = tiers[i];
        out[i].policy = {ExitPolicy::Kind::kFixed, tiers[i]};
        break;
    }
  }
  return out;
}

std::vector<std::size_t> EvaluatedExits(Setting setting, std::size_t depth) {
  if (setting == Setting::kConventional) return {depth};
  std::vector<std::size_t> exits(depth);
  std::iota(exits.begin(), exits.end(), 1);
  return exits;
}

template <typename T>
LocalResult<T> LocalTrain(const Model<T>& global, const Dataset& data, const ClientShard& shard,
                          const ClientProfile& client, const LocalConfig& cfg, std::uint64_t seed) {
  if (shard.size() == 0) {
    throw Error(ErrorKind::kState, "client " + std::to_string(client.id) + " has an empty shard");
  }
  if (client.policy.max_exit < 1 || client.policy.max_exit > global.depth()) {
    throw Error(ErrorKind::kConfig, "client " + std::to_string(client.id) + ": exit budget " +
                                        std::to_string(client.policy.max_exit) + " outside 1.." +
                                        std::to_string(global.depth()));
  }
  LocalResult<T> result;
  result.client_id = client.id;
  result.num_examples = shard.size();
  result.exit_counts.assign(global.depth(), 0);

  Model<T> local = global.Clone();
  ParamRefs<T> params = local.TrainableParams();
  for (auto* p : params) p->ZeroGrad();
  Sgd<T> sgd(cfg.momentum);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order = shard.indices;
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  double loss_sum = 0.0;
  std::size_t batches = 0;
  try {
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += bs) {
        std::span<const std::size_t> batch(order.data() + start, std::min(bs, order.size() - start));
        const std::size_t exit = client.policy.Draw(rng);
        ++result.exit_counts[exit - 1];
        Tape<T> tape;
        const std::size_t exits[] = {exit};
        auto out = ForwardExits(tape, local, GatherImages<T>(data, batch),
                                std::span<const std::size_t>(exits), &rng);
        const auto labels = GatherLabels(data, batch);
        Var<T> loss = ops::CrossEntropy(out.logits.front(), std::span<const int>(labels));
        loss_sum += static_cast<double>(loss.value()[0]);
        ++batches;
        tape.Backward(loss);
        sgd.Step(params, cfg.lr);
      }
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumeric) throw;
    result.failure = e.what();
  }
  result.mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
  if (!result.failure) result.state = local.TrainableState();
  return result;
}

template <typename T>
NamedTensors<T> FedAvg(std::span<const WeightedState<T>> updates) {
  if (updates.empty()) throw Error(ErrorKind::kState, "fedavg: no updates");
  const NamedTensors<T>& ref = *updates.front().state;
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.state == nullptr) throw Error(ErrorKind::kState, "fedavg: null update");
    total += static_cast<double>(u.weight);
    if (u.state->size() != ref.size()) {
      throw Error(ErrorKind::kSchemaMismatch, "fedavg: update has " + std::to_string(u.state->size()) +
                                                  " tensors, expected " + std::to_string(ref.size()));
    }
    for (const auto& [name, t] : *u.state) {
      auto it = ref.find(name);
      if (it == ref.end()) throw Error(ErrorKind::kSchemaMismatch, "fedavg: unexpected parameter '" + name + "'");
      if (it->second.shape() != t.shape()) {
        throw Error(ErrorKind::kSchemaMismatch, "fedavg: '" + name + "' has shape " + ShapeToString(t.shape()) +
                                                    ", expected " + ShapeToString(it->second.shape()));
      }
    }
  }
  if (total <= 0.0) throw Error(ErrorKind::kState, "fedavg: total weight is zero");

  NamedTensors<T> out;
  std::vector<double> acc;
  for (const auto& [name, base] : ref) {
    acc.assign(base.size(), 0.0);
    for (std::size_t k = 1; k < updates.size(); ++k) {
      const double a = static_cast<double>(updates[k].weight) / total;
      const Tensor<T>& w = updates[k].state->at(name);
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += a * (static_cast<double>(w[i]) - static_cast<double>(base[i]));
      }
    }
    Tensor<T> avg(base.shape());
    for (std::size_t i = 0; i < acc.size(); ++i) {
      avg[i] = static_cast<T>(static_cast<double>(base[i]) + acc[i]);
    }
    out.emplace(name, std::move(avg));
  }
  return out;
}

template <typename T>
ExitAccuracy EvaluateExits(const Model<T>& model, const Dataset& test,
                           std::span<const std::size_t> exits, std::size_t batch_size) {
  if (test.size() == 0) throw Error(ErrorKind::kConfig, "evaluate: empty test set");
  ExitAccuracy result;
  std::vector<std::size_t> correct;
  std::vector<std::size_t> idx;
  const std::size_t bs = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < test.size(); start += bs) {
    idx.resize(std::min(bs, test.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tape<T> tape(false);
    auto out = ForwardExits(tape, model, GatherImages<T>(test, idx), exits);
    if (result.exits.empty()) {
      result.exits = out.exits;
      correct.assign(out.exits.size(), 0);
    }
    for (std::size_t e = 0; e < out.logits.size(); ++e) {
      const auto pred = ArgmaxRows(out.logits[e].value());
      for (std::size_t r = 0; r < idx.size(); ++r) correct[e] += pred[r] == test.labels[idx[r]];
    }
  }
  for (std::size_t c : correct) {
    result.accuracy.push_back(static_cast<double>(c) / static_cast<double>(test.size()));
  }
  result.mean = std::accumulate(result.accuracy.begin(), result.accuracy.end(), 0.0) /
                static_cast<double>(result.accuracy.size());
  return result;
}

std::uint64_t CommsCost(std::size_t rounds, std::size_t trainable, std::size_t clients_per_round,
                        bool both_directions) {
  const std::uint64_t per_round = both_directions
                                      ? 2ULL * clients_per_round * trainable
                                      : static_cast<std::uint64_t>(trainable);
  return static_cast<std::uint64_t>(rounds) * per_round;
}

std::string FormatComms(std::size_t rounds, std::size_t trainable) {
  const double m = static_cast<double>(trainable) / 1e6;
  char buf[64];
  if (m >= 0.01) {
    std::snprintf(buf, sizeof buf, "%zu\xC3\x97%.2f", rounds, m);
  } else {
    std::snprintf(buf, sizeof buf, "%zu\xC3\x97%.3g", rounds, m);
  }
  return buf;
}

template <typename T>
FederatedRun<T> RunFederated(Model<T> initial, const Dataset& train,
                             const std::vector<ClientShard>& shards, const Dataset& test,
                             const FederationConfig& cfg, const SgdConfig& sgd,
                             const std::function<void(const RoundReport&)>& on_round) {
  cfg.Validate();
  sgd.Validate();
  if (shards.size() != cfg.num_clients) {
    throw Error(ErrorKind::kConfig, "federation: " + std::to_string(shards.size()) + " shards for " +
                                        std::to_string(cfg.num_clients) + " clients");
  }
  FederatedRun<T> run{std::move(initial), {}, {}};
  const std::size_t depth = run.global.depth();
  run.profiles = MakeProfiles(cfg.setting, cfg.num_clients, depth, cfg.seed);
  const std::vector<std::size_t> eval_exits = EvaluatedExits(cfg.setting, depth);
  const std::size_t trainable = run.global.NumTrainable();
  const std::size_t k = cfg.clients_per_round();
  SgdConfig schedule = sgd;
  schedule.total_steps = static_cast<std::int64_t>(std::max<std::size_t>(1, cfg.rounds));

  auto emit = [&](RoundReport report) {
    if (on_round) on_round(report);
    run.reports.push_back(std::move(report));
  };
  if (cfg.eval_every > 0) {
    RoundReport r0;
    r0.eval = EvaluateExits(run.global, test, eval_exits);
    emit(std::move(r0));
  }

  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    RoundReport report;
    report.round = round;
    report.sampled = SampleClients(cfg.num_clients, cfg.sample_fraction, round, cfg.seed);
    const LocalConfig local{cfg.local_epochs, cfg.batch_size,
                            LrAt(static_cast<std::int64_t>(round - 1), schedule), sgd.momentum};

    std::vector<LocalResult<T>> results(report.sampled.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
      for (std::size_t i = next++; i < results.size(); i = next++) {
        const std::size_t id = report.sampled[i];
        try {
          results[i] = LocalTrain(run.global, train, shards[id], run.profiles[id], local,
                                  DeriveSeed(cfg.seed, {0xc11e, round, id}));
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    };
    const std::size_t threads = std::min(cfg.jobs, results.size());
    if (threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    std::vector<WeightedState<T>> updates;
    double loss_sum = 0.0;
    for (const auto& r : results) {
      if (r.failure) {
        report.failed.push_back(r.client_id);
        continue;
      }
      updates.push_back({&r.state, r.num_examples});
      loss_sum += r.mean_loss;
    }
    if (!updates.empty()) {
      run.global.LoadTrainableState(FedAvg<T>(updates));
      report.mean_loss = loss_sum / static_cast<double>(updates.size());
    } else {
      report.mean_loss = std::nan("");
    }
    report.transmitted = CommsCost(round, trainable, k, cfg.both_directions);
    if (cfg.eval_every > 0 && (round % cfg.eval_every == 0 || round == cfg.rounds)) {
      report.eval = EvaluateExits(run.global, test, eval_exits);
    }
    emit(std::move(report));
  }
  return run;
}

std::string_view ToString(PersonalizeMode m) {
  switch (m) {
    case PersonalizeMode::kFullAdapter: return "full_adapter";
    case PersonalizeMode::kClientTokenOnly: return "client_token_only";
    case PersonalizeMode::kPaOnly: return "pa_only";
    case PersonalizeMode::kFullModel: return "full_model";
  }
  return "unknown";
}

PersonalizeMode ParsePersonalizeMode(std::string_view name) {
  for (PersonalizeMode m : {PersonalizeMode::kFullAdapter, PersonalizeMode::kClientTokenOnly,
                            PersonalizeMode::kPaOnly, PersonalizeMode::kFullModel}) {
    if (name == ToString(m)) return m;
  }
  throw Error(ErrorKind::kConfig, "unknown personalization mode '" + std::string(name) +
                                      "' (expected full_adapter, client_token_only, pa_only, full_model)");
}

template <typename T>
std::vector<std::string> PersonalizedNames(const Model<T>& model, PersonalizeMode mode) {
  std::vector<std::string> names;
  auto collect = [&](const auto& structure) {
    VisitParams(structure, [&](const Parameter<T>& p) { names.push_back(p.name); });
  };
  switch (mode) {
    case PersonalizeMode::kClientTokenOnly:
      if (!model.accumulator) {
        throw Error(ErrorKind::kConfig, "client_token_only personalization needs the accumulator method");
      }
      names.push_back(model.accumulator->client_token.name);
      break;
    case PersonalizeMode::kPaOnly:
      if (!model.parallel_adapter) {
        throw Error(ErrorKind::kConfig, "pa_only personalization needs a method with parallel adapters");
      }
      collect(*model.parallel_adapter);
      break;
    case PersonalizeMode::kFullAdapter:
      for (const auto* p : model.TrainableParams()) names.push_back(p->name);
      break;
    case PersonalizeMode::kFullModel:
      if (!model.tunes_backbone()) collect(*model.backbone);
      for (const auto* p : model.TrainableParams()) names.push_back(p->name);
      break;
  }
  return names;
}

template <typename T>
PersonalizeResult<T> Personalize(const Model<T>& global, const Dataset& train,
                                 const Dataset& holdout, std::size_t exit,
                                 const PersonalizeConfig& cfg, std::uint64_t seed) {
  if (exit < 1 || exit > global.depth()) {
    throw Error(ErrorKind::kConfig, "personalize: exit " + std::to_string(exit) + " outside 1.." +
                                        std::to_string(global.depth()));
  }
  if (train.size() == 0 || holdout.size() == 0) {
    throw Error(ErrorKind::kConfig, "personalize: empty personalization or holdout split");
  }
  const std::vector<std::string> names = PersonalizedNames(global, cfg.mode);
  const std::set<std::string> selected(names.begin(), names.end());

  Model<T> local = global.Clone();
  std::shared_ptr<Backbone<T>> own_backbone;
  if (cfg.mode == PersonalizeMode::kFullModel && !global.tunes_backbone()) {
    own_backbone = std::make_shared<Backbone<T>>(*global.backbone);
    own_backbone->Unfreeze();
    local.backbone = own_backbone;
  }
  ParamRefs<T> params;
  std::vector<const Parameter<T>*> reference;
  auto take = [&](Parameter<T>* p) {
    p->trainable = selected.count(p->name) > 0;
    if (p->trainable) params.push_back(p);
  };
  for (Parameter<T>* p : local.TrainableParams()) take(p);
  if (own_backbone) {
    for (Parameter<T>* p : MutableParams<T>(*own_backbone)) take(p);
  }
  for (auto* p : params) p->ZeroGrad();

  const std::size_t exits[] = {exit};
  PersonalizeResult<T> result;
  result.before = EvaluateExits(global, holdout, exits).accuracy.front();
  for (const auto* p : params) result.trainable += p->size();

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  const std::size_t steps_per_epoch = (order.size() + bs - 1) / bs;
  SgdConfig schedule;
  schedule.base_lr = cfg.lr;
  schedule.total_steps = static_cast<std::int64_t>(std::max<std::size_t>(1, cfg.epochs * steps_per_epoch));
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::span<const std::size_t> batch(order.data() + start, std::min(bs, order.size() - start));
      Tape<T> tape;
      auto out = ForwardExits(tape, local, GatherImages<T>(train, batch),
                              std::span<const std::size_t>(exits), &rng);
      const auto labels = GatherLabels(train, batch);
      tape.Backward(ops::CrossEntropy(out.logits.front(), std::span<const int>(labels)));
      SgdStep(params, LrAt(step++, schedule));
    }
  }
  result.after = EvaluateExits(local, holdout, exits).accuracy.front();

  std::map<std::string, const Parameter<T>*> before;
  VisitParams(global, [&](const Parameter<T>& p) { before[p.name] = &p; });
  VisitParams(*global.backbone, [&](const Parameter<T>& p) { before[p.name] = &p; });
  for (const auto* p : params) {
    const Parameter<T>* g = before.at(p->name);
    for (std::size_t i = 0; i < p->size(); ++i) result.changed += p->value[i] != g->value[i];
  }
  return result;
}

#define FEDACC_INSTANTIATE_FEDERATION(T)                                                        \
  template LocalResult<T> LocalTrain<T>(const Model<T>&, const Dataset&, const ClientShard&,    \
                                        const ClientProfile&, const LocalConfig&, std::uint64_t); \
  template NamedTensors<T> FedAvg<T>(std::span<const WeightedState<T>>);                        \
  template ExitAccuracy EvaluateExits<T>(const Model<T>&, const Dataset&,                       \
                                         std::span<const std::size_t>, std::size_t);            \
  template FederatedRun<T> RunFederated<T>(Model<T>, const Dataset&,                            \
                                           const std::vector<ClientShard>&, const Dataset&,     \
                                           const FederationConfig&, const SgdConfig&,           \
                                           const std::function<void(const RoundReport&)>&);     \
  template std::vector<std::string> PersonalizedNames<T>(const Model<T>&, PersonalizeMode);     \
  template PersonalizeResult<T> Personalize<T>(const Model<T>&, const Dataset&, const Dataset&, \
                                               std::size_t, const PersonalizeConfig&, std::uint64_t);

FEDACC_INSTANTIATE_FEDERATION(float)
FEDACC_INSTANTIATE_FEDERATION(double)

#undef FEDACC_INSTANTIATE_FEDERATION

}  // namespace fedacc
