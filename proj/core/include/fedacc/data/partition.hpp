// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fedacc {

enum class PartitionScheme { kLda, kIid };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::kLda;
  double alpha = 0.1;
  std::size_t num_clients = 40;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

/// Splits example indices across clients.
///
/// LDA: for every class c, proportions q_c ~ Dirichlet(alpha * 1_K) are drawn
/// and each example of c goes to a client sampled from q_c. Clients left
/// empty take one example from the currently largest shard.
/// IID: uniform shuffle, then contiguous split with sizes differing by <= 1.
///
/// Shards are disjoint, exhaustive, non-empty and sorted by index.
std::vector<ClientShard> Partition(std::span<const int> labels, int num_classes,
                                   const PartitionSpec& spec);

/// Mean over clients of the largest single-class share of the client's data.
double MeanMaxClassProportion(const std::vector<ClientShard>& shards,
                              std::span<const int> labels, int num_classes);

}  // namespace fedacc
