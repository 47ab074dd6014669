// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

// fedacc: pretrain a toy backbone, run federated adapter training, personalize
// and report. Any config key can be overridden as `--<dotted.key> <value>`.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedacc/error.hpp"
#include "fedacc/experiment/commands.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Turns CLI11's leftover arguments into (key, value) pairs.
Overrides ParseOverrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2) {
      throw fedacc::Error(fedacc::ErrorKind::kConfig, "unexpected argument '" + arg + "'");
    }
    const std::string body = arg.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size()) {
      out.emplace_back(body, extras[++i]);
    } else {
      throw fedacc::Error(fedacc::ErrorKind::kConfig, "missing value for '" + arg + "'");
    }
  }
  return out;
}

int Fail(fedacc::ErrorKind kind, const std::string& message) {
  nlohmann::json j = {{"error", std::string(fedacc::ToString(kind))}, {"message", message}};
  std::cerr << "fedacc: " << fedacc::ToString(kind) << " error: " << message << "\n" << j.dump() << "\n";
  return fedacc::ExitCode(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated adaptation of a frozen transformer with early exits"};
  app.require_subcommand(1);
  std::string config_path;
  std::size_t jobs = 0;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON config file (defaults apply when omitted)");
    sub->allow_extras();
  };
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain and freeze the backbone");
  add_config(pretrain);
  auto* train = app.add_subcommand("train", "Federated training of the adapter");
  add_config(train);
  train->add_option("-j,--jobs", jobs, "Concurrent client simulations (overrides federation.jobs)");
  auto* params = app.add_subcommand("params", "Trainable-parameter and per-exit budget table");
  add_config(params);

  std::string run_dir;
  auto* personalize = app.add_subcommand("personalize", "Personalize a multi-tier run on corrupted shards");
  personalize->add_option("run_dir", run_dir, "Output directory of a `train` run")->required();
  personalize->allow_extras();

  std::vector<std::string> report_dirs;
  double target = -1.0;
  auto* report = app.add_subcommand("report", "Comms-to-target table across runs");
  report->add_option("run_dirs", report_dirs, "Run directories")->required();
  report->add_option("--target", target, "Target mean accuracy (default: best lw_linear run)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return fedacc::ExitCode(fedacc::ErrorKind::kConfig);
  }

  try {
    auto load = [&](CLI::App* sub) {
      Overrides ov = ParseOverrides(sub->remaining());
      if (jobs > 0) ov.emplace_back("federation.jobs", std::to_string(jobs));
      return fedacc::LoadConfig(config_path, ov);
    };
    if (pretrain->parsed()) {
      fedacc::CmdPretrain(load(pretrain), std::cout);
    } else if (train->parsed()) {
      fedacc::CmdTrain(load(train), std::cout);
    } else if (params->parsed()) {
      fedacc::CmdParams(load(params), std::cout);
    } else if (personalize->parsed()) {
      fedacc::CmdPersonalize(run_dir, ParseOverrides(personalize->remaining()), std::cout);
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
      fedacc::CmdReport(dirs, target >= 0 ? std::optional<double>(target) : std::nullopt, std::cout);
    }
  } catch (const fedacc::Error& e) {
    return Fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return Fail(fedacc::ErrorKind::kIo, e.what());
  } catch (const std::exception& e) {
    return Fail(fedacc::ErrorKind::kState, e.what());
  }
  return 0;
}
