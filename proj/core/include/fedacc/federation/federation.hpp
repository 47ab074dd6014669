// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedacc/adapters/model.hpp"
#include "fedacc/data/dataset.hpp"
#include "fedacc/data/partition.hpp"
#include "fedacc/numerics/optim.hpp"

namespace fedacc {

/// Conventional: every client trains and is evaluated at the final exit.
/// Anytime: each client draws an exit uniformly from 1..L per batch.
/// MultiTier: each client is pinned to a balanced, seeded tier in 1..L.
enum class Setting { kConventional, kAnytime, kMultiTier };

std::string_view ToString(Setting s);
Setting ParseSetting(std::string_view name);

struct ExitPolicy {
  enum class Kind { kFixed, kUniformRandom };
  Kind kind = Kind::kFixed;
  std::size_t max_exit = 1;  // L_i

  std::size_t Draw(std::mt19937_64& rng) const;
};

struct ClientProfile {
  std::size_t id = 0;
  std::size_t tier = 1;
  ExitPolicy policy;
};

struct FederationConfig {
  std::size_t num_clients = 40;
  double sample_fraction = 0.1;
  std::size_t rounds = 300;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 10;
  Setting setting = Setting::kMultiTier;
  std::uint64_t seed = 0;
  /// Evaluate every this many rounds (and after the last round); 0 disables.
  std::size_t eval_every = 10;
  /// Count both links (2 k |w_PE| per round) instead of |w_PE| per round.
  bool both_directions = false;
  /// Upper bound on concurrently simulated clients.
  std::size_t jobs = 1;

  void Validate() const;
  std::size_t clients_per_round() const;
};

/// ceil(K * fraction) distinct ids in ascending order, from a stream keyed by
/// (seed, round).
std::vector<std::size_t> SampleClients(std::size_t num_clients, double fraction,
                                       std::size_t round, std::uint64_t seed);

/// Tiers 1..L with counts differing by at most one, in a seeded permutation.
std::vector<std::size_t> AssignTiers(std::size_t num_clients, std::size_t depth, std::uint64_t seed);

std::vector<ClientProfile> MakeProfiles(Setting setting, std::size_t num_clients, std::size_t depth,
                                        std::uint64_t seed);

/// Exits evaluated under a setting: only L for Conventional, otherwise 1..L.
std::vector<std::size_t> EvaluatedExits(Setting setting, std::size_t depth);

struct LocalConfig {
  std::size_t local_epochs = 1;
  std::size_t batch_size = 10;
  double lr = 5e-3;
  double momentum = 0.0;
};

template <typename T>
struct LocalResult {
  std::size_t client_id = 0;
  std::size_t num_examples = 0;  // N_i
  NamedTensors<T> state;
  double mean_loss = 0.0;
  std::vector<std::size_t> exit_counts;  // index e-1 counts batches at exit e
  /// Set when a numeric failure aborted the client's round; the client is
  /// then left out of aggregation.
  std::optional<std::string> failure;
};

/// Trains a private copy of `global` on one shard.
template <typename T>
LocalResult<T> LocalTrain(const Model<T>& global, const Dataset& data, const ClientShard& shard,
                          const ClientProfile& client, const LocalConfig& cfg, std::uint64_t seed);

template <typename T>
struct WeightedState {
  const NamedTensors<T>* state = nullptr;
  std::size_t weight = 0;
};

/// Sum_i (N_i / Sum_j N_j) w_i, evaluated as w_1 + Sum_i a_i (w_i - w_1) in
/// double precision so that identical inputs are returned bit for bit.
template <typename T>
NamedTensors<T> FedAvg(std::span<const WeightedState<T>> updates);

struct ExitAccuracy {
  std::vector<std::size_t> exits;
  std::vector<double> accuracy;
  double mean = 0.0;
};

template <typename T>
ExitAccuracy EvaluateExits(const Model<T>& model, const Dataset& test,
                           std::span<const std::size_t> exits, std::size_t batch_size = 256);

/// Cumulative transmitted parameters after `rounds` rounds.
std::uint64_t CommsCost(std::size_t rounds, std::size_t trainable, std::size_t clients_per_round,
                        bool both_directions);
/// "rounds×M" with the parameter count in millions.
std::string FormatComms(std::size_t rounds, std::size_t trainable);

struct RoundReport {
  std::size_t round = 0;  // 0 is the pre-training evaluation
  std::vector<std::size_t> sampled;
  std::vector<std::size_t> failed;
  std::uint64_t transmitted = 0;  // cumulative
  double mean_loss = 0.0;
  std::optional<ExitAccuracy> eval;
};

template <typename T>
struct FederatedRun {
  Model<T> global;
  std::vector<ClientProfile> profiles;
  std::vector<RoundReport> reports;
};

/// FedAvg over w_PE for cfg.rounds rounds. The learning rate follows the
/// cosine schedule indexed by round. Clients of a round run on up to cfg.jobs
/// threads; results do not depend on the thread count.
template <typename T>
FederatedRun<T> RunFederated(Model<T> initial, const Dataset& train,
                             const std::vector<ClientShard>& shards, const Dataset& test,
                             const FederationConfig& cfg, const SgdConfig& sgd,
                             const std::function<void(const RoundReport&)>& on_round = {});

enum class PersonalizeMode { kFullAdapter, kClientTokenOnly, kPaOnly, kFullModel };

std::string_view ToString(PersonalizeMode m);
PersonalizeMode ParsePersonalizeMode(std::string_view name);

struct PersonalizeConfig {
  PersonalizeMode mode = PersonalizeMode::kClientTokenOnly;
  std::size_t epochs = 10;
  std::size_t batch_size = 10;
  double lr = 5e-3;
};

template <typename T>
struct PersonalizeResult {
  double before = 0.0;
  double after = 0.0;
  std::size_t trainable = 0;  // scalars in the mode's parameter subset
  std::size_t changed = 0;    // scalars that differ from the global model
};

/// Parameter names a mode fine-tunes; throws kConfig when the mode does not
/// apply to the model's method.
template <typename T>
std::vector<std::string> PersonalizedNames(const Model<T>& model, PersonalizeMode mode);

/// Fine-tunes a copy of `global` on `train` at a fixed exit and reports
/// accuracy on `holdout` before and after. Under FullModel the backbone is
/// copied and unfrozen; otherwise it stays shared and frozen.
template <typename T>
PersonalizeResult<T> Personalize(const Model<T>& global, const Dataset& train,
                                 const Dataset& holdout, std::size_t exit,
                                 const PersonalizeConfig& cfg, std::uint64_t seed);

}  // namespace fedacc
