// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedacc/numerics/tensor.hpp"

namespace fedacc {

/// Labelled images with pixel values in [0, 1], stored as [n, channels, side, side].
struct Dataset {
  Tensor<float> inputs;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return inputs.dim(1); }
  std::size_t side() const { return inputs.dim(2); }
  std::size_t example_size() const { return channels() * side() * side(); }

  /// Checks labels are in [0, C) and the first extent matches the label count.
  void Validate() const;
  Dataset Subset(std::span<const std::size_t> indices) const;
  /// Per-class example counts.
  std::vector<std::size_t> ClassCounts() const;
};

/// Copies the selected examples into a [B, C, S, S] batch at precision T.
template <typename T>
Tensor<T> GatherImages(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<int> GatherLabels(const Dataset& ds, std::span<const std::size_t> indices);

struct SynthSpec {
  int num_classes = 8;
  std::size_t n = 4096;
  std::size_t side = 16;
  std::size_t channels = 1;
  double cluster_std = 0.3;
  std::uint64_t label_map_seed = 1;
  std::uint64_t noise_seed = 2;
};

/// Each class is a fixed random template (drawn from label_map_seed) plus
/// Gaussian pixel noise (noise_seed), clipped to [0, 1]. Class sizes differ by
/// at most one and example order is shuffled.
Dataset SynthDataset(const SynthSpec& spec);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixel bytes are scaled by 1/255. The class count is max(label) + 1.
Dataset LoadIdx(const std::filesystem::path& images, const std::filesystem::path& labels);

struct CorruptionSpec {
  int severity = 0;
  std::uint64_t seed = 0;

  double noise_std() const { return 0.1 * severity; }
};

/// Additive Gaussian noise with std 0.1 * severity, clipped to [0, 1].
/// Severity 0 returns an identical copy.
Dataset Corrupt(const Dataset& ds, const CorruptionSpec& spec);

}  // namespace fedacc
