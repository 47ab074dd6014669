// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/experiment/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "fedacc/numerics/rng.hpp"
#include "fedacc/persistence/checkpoint.hpp"

namespace fedacc {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string Num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string Fixed(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void EchoConfig(const ExperimentConfig& cfg) {
  WriteFileAtomic(fs::path(cfg.output_dir) / kConfigEcho, ConfigToJson(cfg));
}

json ReadJson(const fs::path& path) {
  try {
    return json::parse(ReadFile(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

std::string Millions(std::size_t n) {
  const double m = static_cast<double>(n) / 1e6;
  if (m >= 0.01) return Fixed(m, 2) + "M";
  return Fixed(static_cast<double>(n) / 1e3, 2) + "K";
}

}  // namespace

Dataset PretrainData(const ExperimentConfig& cfg) {
  SynthSpec s;
  s.num_classes = static_cast<int>(cfg.backbone.pretrain_classes);
  s.n = cfg.pretrain.n;
  s.side = cfg.backbone.image_side;
  s.channels = cfg.backbone.channels;
  s.cluster_std = cfg.pretrain.cluster_std;
  s.label_map_seed = cfg.pretrain.label_map_seed;
  s.noise_seed = cfg.pretrain.noise_seed;
  return SynthDataset(s);
}

ExperimentData LoadExperimentData(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.dataset.source == "idx") {
    d.train = LoadIdx(cfg.dataset.train_images, cfg.dataset.train_labels);
    d.test = LoadIdx(cfg.dataset.test_images, cfg.dataset.test_labels);
    d.train.num_classes = d.test.num_classes = std::max(d.train.num_classes, d.test.num_classes);
  } else {
    const auto& syn = cfg.dataset.synthetic;
    SynthSpec s;
    s.num_classes = syn.num_classes;
    s.n = syn.n_train;
    s.side = cfg.backbone.image_side;
    s.channels = cfg.backbone.channels;
    s.cluster_std = syn.cluster_std;
    s.label_map_seed = syn.label_map_seed;
    s.noise_seed = syn.noise_seed;
    d.train = SynthDataset(s);
    s.n = syn.n_test;
    s.noise_seed = DeriveSeed(syn.noise_seed, {0x7e57});
    d.test = SynthDataset(s);
  }
  if (d.train.channels() != cfg.backbone.channels || d.train.side() != cfg.backbone.image_side) {
    throw Error(ErrorKind::kSchemaMismatch,
                "dataset images are " + std::to_string(d.train.channels()) + "x" +
                    std::to_string(d.train.side()) + "x" + std::to_string(d.train.side()) +
                    ", backbone expects " + std::to_string(cfg.backbone.channels) + "x" +
                    std::to_string(cfg.backbone.image_side) + "x" + std::to_string(cfg.backbone.image_side));
  }
  return d;
}

std::shared_ptr<const Backbone<float>> LoadFrozenBackbone(const ExperimentConfig& cfg) {
  const fs::path path = cfg.backbone_path();
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kIo, "backbone checkpoint " + path.string() + " not found (run `fedacc pretrain` first)");
  }
  auto backbone = std::make_shared<Backbone<float>>(BackboneFromCheckpoint<float>(LoadCheckpoint(path)));
  if (!(backbone->config == cfg.backbone)) {
    throw Error(ErrorKind::kSchemaMismatch, "backbone checkpoint " + path.string() +
                                                " was built for a different backbone configuration");
  }
  backbone->Freeze();
  return backbone;
}

PretrainSummary CmdPretrain(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.Validate();
  fs::create_directories(cfg.output_dir);
  EchoConfig(cfg);
  PretrainSummary summary;
  summary.checkpoint = cfg.backbone_path();
  std::string metrics = "epoch,loss\n";
  Backbone<float> backbone;
  if (cfg.pretrain.options.epochs == 0) {
    backbone = Backbone<float>::Init(cfg.backbone, cfg.seed);
    backbone.Freeze();
    summary.holdout_accuracy = std::nan("");
    log << "pretrain: epochs=0, writing frozen random initialization\n";
  } else {
    auto result = PretrainBackbone<float>(cfg.backbone, PretrainData(cfg), cfg.pretrain.options, cfg.seed);
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
      metrics += std::to_string(e + 1) + "," + Num(result.epoch_losses[e]) + "\n";
    }
    summary.holdout_accuracy = result.holdout_accuracy;
    backbone = std::move(result.backbone);
    log << "pretrain: holdout accuracy " << Fixed(summary.holdout_accuracy, 4) << "\n";
  }
  summary.num_params = backbone.NumParams();
  SaveCheckpoint(BackboneCheckpoint(backbone), summary.checkpoint);
  WriteFileAtomic(fs::path(cfg.output_dir) / kPretrainMetrics, metrics);
  json s = {{"checkpoint", summary.checkpoint.string()},
            {"num_params", summary.num_params},
            {"holdout_accuracy", std::isnan(summary.holdout_accuracy) ? json(nullptr) : json(summary.holdout_accuracy)}};
  WriteFileAtomic(fs::path(cfg.output_dir) / "pretrain_summary.json", s.dump(2) + "\n");
  log << "pretrain: " << summary.num_params << " parameters -> " << summary.checkpoint.string() << "\n";
  return summary;
}

TrainSummary CmdTrain(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.Validate();
  auto backbone = LoadFrozenBackbone(cfg);
  ExperimentData data = LoadExperimentData(cfg);
  ModelOptions options = cfg.model;
  options.num_classes = static_cast<std::size_t>(data.train.num_classes);
  PartitionSpec part = cfg.partition;
  const auto shards = Partition(data.train.labels, data.train.num_classes, part);

  fs::create_directories(cfg.output_dir);
  EchoConfig(cfg);
  Model<float> model = Model<float>::Create(backbone, options, DeriveSeed(cfg.seed, {0x40de1}));
  const auto exits = EvaluatedExits(cfg.federation.setting, backbone->config.depth);

  std::ostringstream csv;
  csv << "round,transmitted_params,loss";
  for (std::size_t e : exits) csv << ",acc_exit_" << e;
  csv << ",acc_mean\n";
  auto on_round = [&](const RoundReport& r) {
    csv << r.round << "," << r.transmitted << "," << (r.round == 0 ? "" : Num(r.mean_loss));
    if (r.eval) {
      for (double a : r.eval->accuracy) csv << "," << Num(a);
      csv << "," << Num(r.eval->mean);
      log << "round " << r.round << ": mean accuracy " << Fixed(r.eval->mean, 4) << "\n";
    } else {
      for (std::size_t i = 0; i <= exits.size(); ++i) csv << ",";
    }
    csv << "\n";
    if (!r.failed.empty()) {
      log << "round " << r.round << ": " << r.failed.size() << " client(s) hit a numeric failure and were skipped\n";
    }
  };
  log << "train: " << ToString(options.method.kind) << (options.method.with_pa ? "+pa" : "") << ", "
      << model.NumTrainable() << " trainable parameters, " << cfg.federation.rounds << " rounds\n";
  FederatedRun<float> run = RunFederated(std::move(model), data.train, shards, data.test, cfg.federation,
                                         cfg.sgd, on_round);
  WriteFileAtomic(fs::path(cfg.output_dir) / kMetricsFile, csv.str());

  TrainSummary summary;
  summary.method = std::string(ToString(options.method.kind)) + (options.method.with_pa ? "+pa" : "");
  summary.trainable = run.global.NumTrainable();
  summary.exits = exits;
  summary.rounds = cfg.federation.rounds;
  ExitAccuracy final_eval = EvaluateExits(run.global, data.test, exits);
  summary.final_accuracy = final_eval.accuracy;
  summary.final_mean = final_eval.mean;
  summary.reports = run.reports;

  Checkpoint ckpt;
  ckpt.metadata = {{"kind", "adapter"}, {"method", summary.method}};
  StoreParams<float>(ckpt, std::as_const(run.global).TrainableParams());
  SaveCheckpoint(ckpt, fs::path(cfg.output_dir) / kGlobalCheckpoint);

  json s = {{"method", summary.method},
            {"setting", std::string(ToString(cfg.federation.setting))},
            {"trainable_params", summary.trainable},
            {"rounds", summary.rounds},
            {"exits", summary.exits},
            {"final_accuracy", summary.final_accuracy},
            {"final_mean", summary.final_mean},
            {"transmitted_params", CommsCost(summary.rounds, summary.trainable,
                                             cfg.federation.clients_per_round(),
                                             cfg.federation.both_directions)}};
  if (cfg.report_target >= 0) {
    s["target"] = cfg.report_target;
    s["comms_to_target"] = nullptr;
    for (const auto& r : run.reports) {
      if (r.eval && r.eval->mean >= cfg.report_target) {
        s["comms_to_target"] = {{"rounds", r.round},
                                {"params", r.transmitted},
                                {"formatted", FormatComms(r.round, summary.trainable)}};
        break;
      }
    }
  }
  WriteFileAtomic(fs::path(cfg.output_dir) / kSummaryFile, s.dump(2) + "\n");
  log << "train: final mean accuracy " << Fixed(summary.final_mean, 4) << "\n";
  return summary;
}

PersonalizeReport CmdPersonalize(const fs::path& run_dir,
                                 const std::vector<std::pair<std::string, std::string>>& overrides,
                                 std::ostream& out) {
  if (!fs::is_directory(run_dir)) throw Error(ErrorKind::kIo, "run directory " + run_dir.string() + " not found");
  ExperimentConfig cfg = LoadConfig(run_dir / kConfigEcho, overrides);
  if (cfg.federation.setting != Setting::kMultiTier) {
    throw Error(ErrorKind::kConfig, "personalize needs a multi_tier run, " + run_dir.string() + " used " +
                                        std::string(ToString(cfg.federation.setting)));
  }
  auto backbone = LoadFrozenBackbone(cfg);
  ExperimentData data = LoadExperimentData(cfg);
  ModelOptions options = cfg.model;
  options.num_classes = static_cast<std::size_t>(data.train.num_classes);
  Model<float> global = Model<float>::Create(backbone, options, 0);
  RestoreParams<float>(LoadCheckpoint(run_dir / kGlobalCheckpoint), global.TrainableParams(), false);
  for (PersonalizeMode m : cfg.personalize.modes) PersonalizedNames(global, m);  // mode/method check

  const auto shards = Partition(data.train.labels, data.train.num_classes, cfg.partition);
  const auto profiles = MakeProfiles(cfg.federation.setting, cfg.federation.num_clients,
                                     backbone->config.depth, cfg.seed);
  std::vector<std::size_t> clients(cfg.federation.num_clients);
  std::iota(clients.begin(), clients.end(), 0);
  auto pick_rng = MakeRng(cfg.seed, {0x9e5});
  std::shuffle(clients.begin(), clients.end(), pick_rng);
  clients.resize(cfg.personalize.num_clients);
  std::sort(clients.begin(), clients.end());

  PersonalizeReport report;
  std::ostringstream csv;
  csv << "client,tier,mode,n_train,n_holdout,before,after,gain,trainable,changed\n";
  for (std::size_t id : clients) {
    Dataset local = data.train.Subset(shards[id].indices);
    local = Corrupt(local, {cfg.personalize.severity, DeriveSeed(cfg.personalize.corruption_seed, {id})});
    std::vector<std::size_t> order(local.size());
    std::iota(order.begin(), order.end(), 0);
    auto split_rng = MakeRng(cfg.seed, {0x5b1, id});
    std::shuffle(order.begin(), order.end(), split_rng);
    auto n_hold = static_cast<std::size_t>(std::llround(cfg.personalize.holdout_fraction * static_cast<double>(order.size())));
    n_hold = std::clamp<std::size_t>(n_hold, 1, order.size() > 1 ? order.size() - 1 : 1);
    if (order.size() < 2) {
      out << "personalize: client " << id << " has fewer than 2 examples, skipped\n";
      continue;
    }
    std::vector<std::size_t> hold_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
    std::sort(hold_idx.begin(), hold_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    const Dataset holdout = local.Subset(hold_idx);
    const Dataset train = local.Subset(train_idx);
    for (PersonalizeMode mode : cfg.personalize.modes) {
      PersonalizeConfig pc{mode, cfg.personalize.epochs, cfg.personalize.batch_size, cfg.personalize.lr};
      auto r = Personalize(global, train, holdout, profiles[id].tier, pc,
                           DeriveSeed(cfg.seed, {0x9e2, id, static_cast<std::uint64_t>(mode)}));
      PersonalizeRow row{id, profiles[id].tier, std::string(ToString(mode)), train.size(), holdout.size(),
                         r.before, r.after, r.trainable, r.changed};
      csv << row.client << "," << row.tier << "," << row.mode << "," << row.n_train << "," << row.n_holdout
          << "," << Num(row.before) << "," << Num(row.after) << "," << Num(row.after - row.before) << ","
          << row.trainable << "," << row.changed << "\n";
      report.rows.push_back(std::move(row));
    }
  }
  WriteFileAtomic(run_dir / kPersonalizeFile, csv.str());

  json summary = json::object();
  out << "mode                 before          after (gain)            improved  params\n";
  for (PersonalizeMode mode : cfg.personalize.modes) {
    std::vector<double> before, after;
    std::size_t improved = 0, trainable = 0;
    for (const auto& row : report.rows) {
      if (row.mode != ToString(mode)) continue;
      before.push_back(row.before);
      after.push_back(row.after);
      improved += row.after > row.before;
      trainable = row.trainable;
    }
    if (before.empty()) continue;
    auto stats = [](const std::vector<double>& v) {
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      return std::pair{mean, std::sqrt(var / static_cast<double>(v.size()))};
    };
    const auto [mb, sb] = stats(before);
    const auto [ma, sa] = stats(after);
    summary[std::string(ToString(mode))] = {{"clients", before.size()},
                                            {"before_mean", mb}, {"before_std", sb},
                                            {"after_mean", ma}, {"after_std", sa},
                                            {"gain", ma - mb},
                                            {"improved_fraction", static_cast<double>(improved) / static_cast<double>(before.size())},
                                            {"trainable_params", trainable}};
    out << std::left << std::setw(20) << ToString(mode) << " "
        << Fixed(100 * mb, 2) << "±" << Fixed(100 * sb, 2) << "   "
        << Fixed(100 * ma, 2) << "±" << Fixed(100 * sa, 2) << " (" << (ma >= mb ? "+" : "") << Fixed(100 * (ma - mb), 2) << ")   "
        << improved << "/" << before.size() << "     " << trainable << "\n";
  }
  WriteFileAtomic(run_dir / kPersonalizeSummary, summary.dump(2) + "\n");
  return report;
}

void CmdParams(const ExperimentConfig& cfg, std::ostream& out) {
  const BackboneConfig& b = cfg.backbone;
  b.Validate();
  const std::size_t classes = static_cast<std::size_t>(cfg.dataset.synthetic.num_classes);
  const auto& acc = cfg.model.accumulator;
  const auto& pa = cfg.model.parallel_adapter;
  struct Row {
    std::string name;
    std::size_t count;
  };
  const std::vector<Row> rows = {
      {"full_finetune", CountTrainableParams({MethodKind::kFullFineTune, false}, b, classes, acc, pa)},
      {"lw_linear", CountTrainableParams({MethodKind::kLwLinear, false}, b, classes, acc, pa)},
      {"lw_mlp", CountTrainableParams({MethodKind::kLwMlp, false}, b, classes, acc, pa)},
      {"parallel_adapter", CountParallelAdapterParams(b, pa)},
      {"accumulator", CountTrainableParams({MethodKind::kAccumulator, false}, b, classes, acc, pa)},
      {"client_token", b.embed_dim},
  };
  out << "backbone L=" << b.depth << " d=" << b.embed_dim << " heads=" << b.num_heads
      << " mlp_ratio=" << b.mlp_ratio << " classes=" << classes << " (backbone "
      << CountBackboneParams(b) << " parameters)\n";
  out << "method              trainable      approx\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(18) << r.name << " " << std::right << std::setw(10) << r.count << "   "
        << Millions(r.count) << "\n";
  }
  out << "\nper-exit inference budget (per example)\n";
  for (MethodKind k : {MethodKind::kLwLinear, MethodKind::kLwMlp, MethodKind::kAccumulator}) {
    out << ToString(k) << ":\n  exit    params_touched            macs\n";
    for (const auto& e : EstimateExitBudgets({k, cfg.model.method.with_pa}, b, classes, acc, pa)) {
      out << "  " << std::setw(4) << e.exit << "  " << std::setw(16) << e.params_touched << "  "
          << std::setw(14) << e.macs << "\n";
    }
  }
}

namespace {

struct MetricsRow {
  std::size_t round = 0;
  std::uint64_t transmitted = 0;
  std::optional<double> mean;
};

std::vector<MetricsRow> ReadMetrics(const fs::path& path) {
  std::istringstream in(ReadFile(path));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kFormat, path.string() + ": empty metrics file");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    for (std::string cell; std::getline(h, cell, ',');) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "round" || header[1] != "transmitted_params" || header.back() != "acc_mean") {
    throw Error(ErrorKind::kFormat, path.string() + ": unexpected metrics header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t c; (c = line.find(',', start)) != std::string::npos; start = c + 1) {
      cells.push_back(line.substr(start, c - start));
    }
    cells.push_back(line.substr(start));
    if (cells.size() != header.size()) throw Error(ErrorKind::kFormat, path.string() + ": ragged row");
    MetricsRow r;
    try {
      r.round = std::stoull(cells[0]);
      r.transmitted = std::stoull(cells[1]);
      if (!cells.back().empty()) r.mean = std::stod(cells.back());
    } catch (const std::exception&) {
      throw Error(ErrorKind::kFormat, path.string() + ": unparsable row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

ReportResult CmdReport(const std::vector<fs::path>& run_dirs, std::optional<double> target, std::ostream& out) {
  if (run_dirs.empty()) throw Error(ErrorKind::kConfig, "report: no run directories given");
  struct Run {
    fs::path dir;
    std::string method;
    std::size_t trainable;
    std::vector<MetricsRow> metrics;
  };
  std::vector<Run> runs;
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::kIo, "run directory " + dir.string() + " not found");
    const json summary = ReadJson(dir / kSummaryFile);
    runs.push_back({dir, summary.at("method").get<std::string>(), summary.at("trainable_params").get<std::size_t>(),
                    ReadMetrics(dir / kMetricsFile)});
  }
  ReportResult result;
  if (target) {
    result.target = *target;
  } else {
    bool found = false;
    for (const auto& r : runs) {
      if (r.method != "lw_linear") continue;
      for (const auto& m : r.metrics) {
        if (m.mean) {
          result.target = found ? std::max(result.target, *m.mean) : *m.mean;
          found = true;
        }
      }
    }
    if (!found) throw Error(ErrorKind::kConfig, "report: no target given and no lw_linear run to derive one from");
  }
  out << "target mean accuracy " << Fixed(result.target, 4) << "\n";
  out << "run                              method            best     comms-to-target\n";
  for (const auto& r : runs) {
    ReportRow row{r.dir, r.method, r.trainable, 0.0, std::nullopt, std::nullopt};
    for (const auto& m : r.metrics) {
      if (!m.mean) continue;
      row.best_mean = std::max(row.best_mean, *m.mean);
      if (!row.rounds_to_target && *m.mean >= result.target) {
        row.rounds_to_target = m.round;
        row.comms_to_target = m.transmitted;
      }
    }
    out << std::left << std::setw(32) << r.dir.filename().string() << " " << std::setw(16) << r.method << "  "
        << Fixed(row.best_mean, 4) << "   "
        << (row.rounds_to_target ? FormatComms(*row.rounds_to_target, r.trainable) + " = " +
                                       std::to_string(*row.comms_to_target)
                                 : std::string("not reached"))
        << "\n";
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace fedacc
