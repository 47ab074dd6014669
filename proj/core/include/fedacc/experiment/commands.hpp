// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedacc/experiment/config.hpp"

namespace fedacc {

// Files written into the output directory.
inline constexpr const char* kConfigEcho = "config.json";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kGlobalCheckpoint = "global.ckpt";
inline constexpr const char* kPretrainMetrics = "pretrain_metrics.csv";
inline constexpr const char* kPersonalizeFile = "personalize.csv";
inline constexpr const char* kPersonalizeSummary = "personalize_summary.json";

struct PretrainSummary {
  std::filesystem::path checkpoint;
  double holdout_accuracy = 0.0;
  std::size_t num_params = 0;
};

/// Pretrains (or, with zero epochs, initializes) and freezes the backbone,
/// then writes the checkpoint, pretrain_metrics.csv and the config echo.
PretrainSummary CmdPretrain(const ExperimentConfig& cfg, std::ostream& log);

struct TrainSummary {
  std::string method;
  std::size_t trainable = 0;
  std::vector<std::size_t> exits;
  std::vector<double> final_accuracy;
  double final_mean = 0.0;
  std::size_t rounds = 0;
  std::vector<RoundReport> reports;
};

/// Loads the backbone checkpoint and runs federated training. Writes
/// metrics.csv (one row per round), summary.json, global.ckpt and the config
/// echo.
TrainSummary CmdTrain(const ExperimentConfig& cfg, std::ostream& log);

struct PersonalizeRow {
  std::size_t client = 0;
  std::size_t tier = 0;
  std::string mode;
  std::size_t n_train = 0, n_holdout = 0;
  double before = 0.0, after = 0.0;
  std::size_t trainable = 0, changed = 0;
};

struct PersonalizeReport {
  std::vector<PersonalizeRow> rows;
};

/// Fine-tunes the trained global model of a multi-tier run on corrupted
/// client shards. `overrides` may change personalize.* keys of the run's
/// echoed config.
PersonalizeReport CmdPersonalize(const std::filesystem::path& run_dir,
                                 const std::vector<std::pair<std::string, std::string>>& overrides,
                                 std::ostream& out);

/// Trainable parameter counts per method and per-exit budgets (shape only).
void CmdParams(const ExperimentConfig& cfg, std::ostream& out);

struct ReportRow {
  std::filesystem::path run_dir;
  std::string method;
  std::size_t trainable = 0;
  double best_mean = 0.0;
  std::optional<std::size_t> rounds_to_target;
  std::optional<std::uint64_t> comms_to_target;
};

struct ReportResult {
  double target = 0.0;
  std::vector<ReportRow> rows;
};

/// Comms-to-target across runs, from their metrics and summaries only. With
/// no explicit target, the best mean accuracy of any lw_linear run is used.
ReportResult CmdReport(const std::vector<std::filesystem::path>& run_dirs,
                       std::optional<double> target, std::ostream& out);

/// Shared experiment plumbing.
struct ExperimentData {
  Dataset train;
  Dataset test;
};
ExperimentData LoadExperimentData(const ExperimentConfig& cfg);
Dataset PretrainData(const ExperimentConfig& cfg);
std::shared_ptr<const Backbone<float>> LoadFrozenBackbone(const ExperimentConfig& cfg);

}  // namespace fedacc
