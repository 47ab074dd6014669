// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/data/partition.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "fedacc/error.hpp"
#include "fedacc/numerics/rng.hpp"

namespace fedacc {

void PartitionSpec::Validate() const {
  if (num_clients < 1) throw Error(ErrorKind::kConfig, "partition: num_clients must be >= 1");
  if (scheme == PartitionScheme::kLda && !(alpha > 0.0)) {
    throw Error(ErrorKind::kConfig, "partition: LDA alpha must be > 0");
  }
}

namespace {

std::vector<std::vector<std::size_t>> LdaAssign(std::span<const int> labels, int num_classes,
                                                const PartitionSpec& spec) {
  const std::size_t k = spec.num_clients;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class.at(static_cast<std::size_t>(labels[i])).push_back(i);
  }
  std::vector<std::vector<std::size_t>> assigned(k);
  std::gamma_distribution<double> gamma(spec.alpha, 1.0);
  std::vector<double> q(k);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::mt19937_64 rng = MakeRng(spec.seed, {0x1da, c});
    double total = 0.0;
    for (double& v : q) total += (v = gamma(rng));
    if (!(total > 0.0)) {
      // Every gamma draw underflowed (tiny alpha); fall back to one client.
      std::fill(q.begin(), q.end(), 0.0);
      q[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
    }
    std::discrete_distribution<std::size_t> pick(q.begin(), q.end());
    for (std::size_t idx : by_class[c]) assigned[pick(rng)].push_back(idx);
  }
  // Repair empty clients by taking one example from the current largest shard.
  for (std::size_t i = 0; i < k; ++i) {
    if (!assigned[i].empty()) continue;
    auto largest = std::max_element(assigned.begin(), assigned.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    assigned[i].push_back(largest->back());
    largest->pop_back();
  }
  return assigned;
}

std::vector<std::vector<std::size_t>> IidAssign(std::size_t n, const PartitionSpec& spec) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng = MakeRng(spec.seed, {0x11d});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t k = spec.num_clients;
  std::vector<std::vector<std::size_t>> assigned(k);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t take = n / k + (i < n % k ? 1 : 0);
    assigned[i].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
  }
  return assigned;
}

}  // namespace

std::vector<ClientShard> Partition(std::span<const int> labels, int num_classes,
                                   const PartitionSpec& spec) {
  spec.Validate();
  if (spec.num_clients > labels.size()) {
    throw Error(ErrorKind::kConfig, "partition: " + std::to_string(spec.num_clients) +
                                        " clients exceed " + std::to_string(labels.size()) +
                                        " examples");
  }
  auto assigned = spec.scheme == PartitionScheme::kLda
                      ? LdaAssign(labels, num_classes, spec)
                      : IidAssign(labels.size(), spec);
  std::vector<ClientShard> shards(assigned.size());
  for (std::size_t i = 0; i < assigned.size(); ++i) {
    shards[i].client_id = i;
    shards[i].indices = std::move(assigned[i]);
    std::sort(shards[i].indices.begin(), shards[i].indices.end());
  }
  return shards;
}

double MeanMaxClassProportion(const std::vector<ClientShard>& shards,
                              std::span<const int> labels, int num_classes) {
  if (shards.empty()) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes));
  for (const auto& shard : shards) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t idx : shard.indices) ++counts[static_cast<std::size_t>(labels[idx])];
    const std::size_t mx = *std::max_element(counts.begin(), counts.end());
    total += shard.size() ? static_cast<double>(mx) / static_cast<double>(shard.size()) : 0.0;
  }
  return total / static_cast<double>(shards.size());
}

}  // namespace fedacc
