// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedacc/adapters/model.hpp"
#include "fedacc/backbone/backbone.hpp"
#include "fedacc/data/dataset.hpp"
#include "fedacc/data/partition.hpp"
#include "fedacc/federation/federation.hpp"
#include "fedacc/numerics/optim.hpp"

namespace fedacc {

struct SynthSection {
  int num_classes = 8;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  double cluster_std = 0.2;
  std::uint64_t label_map_seed = 201;
  std::uint64_t noise_seed = 202;
};

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | idx
  SynthSection synthetic;
  std::string train_images, train_labels, test_images, test_labels;
};

struct PretrainSection {
  PretrainOptions options;
  std::size_t n = 4096;
  double cluster_std = 0.3;
  std::uint64_t label_map_seed = 101;
  std::uint64_t noise_seed = 102;
};

struct PersonalizeSection {
  std::vector<PersonalizeMode> modes = {PersonalizeMode::kClientTokenOnly};
  std::size_t epochs = 10;
  std::size_t batch_size = 10;
  double lr = 5e-3;
  int severity = 3;
  std::size_t num_clients = 20;
  double holdout_fraction = 0.5;
  std::uint64_t corruption_seed = 31;
};

/// Every knob of an experiment. Keys mirror the JSON layout, e.g.
/// "federation.rounds" or "adapter.method".
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string backbone_preset = "toy";  // toy | deit_small_shape | custom
  BackboneConfig backbone = BackboneConfig::Toy();
  std::string backbone_checkpoint;  // empty: <output_dir>/backbone.ckpt
  PretrainSection pretrain;
  DatasetSection dataset;
  PartitionSpec partition;
  FederationConfig federation;
  SgdConfig sgd;
  ModelOptions model;
  PersonalizeSection personalize;
  /// Comms-to-target accuracy; negative means "best layer-wise linear run".
  double report_target = -1.0;

  /// All semantic problems at once, one per line; empty when valid.
  std::vector<std::string> Problems() const;
  void Validate() const;
  std::filesystem::path backbone_path() const;
};

/// The resolved configuration as nested JSON text (sorted keys).
std::string ConfigToJson(const ExperimentConfig& cfg);

/// Defaults, then the file (if any), then overrides. Unknown keys and
/// ill-typed values are collected and reported together as one kConfig error.
/// Override values are parsed as JSON when possible, otherwise taken as
/// strings, so `--federation.rounds 50` and `--adapter.method lw_linear`
/// both work.
ExperimentConfig LoadConfig(const std::filesystem::path& file,
                            const std::vector<std::pair<std::string, std::string>>& overrides);
ExperimentConfig ParseConfig(const std::string& json_text,
                             const std::vector<std::pair<std::string, std::string>>& overrides);

/// Every recognized dotted key, sorted.
std::vector<std::string> ConfigKeys();

}  // namespace fedacc
