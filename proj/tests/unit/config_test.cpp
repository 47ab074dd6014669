// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fedacc/experiment/config.hpp"

namespace fedacc {
namespace {

std::string ConfigError(const std::string& json, std::vector<std::pair<std::string, std::string>> ov = {}) {
  try {
    ParseConfig(json, ov);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
    return e.what();
  }
  FAIL("config accepted");
  return {};
}

TEST_CASE("defaults follow the documented values") {
  const auto cfg = ParseConfig("{}", {});
  CHECK(cfg.sgd.base_lr == 5e-3);
  CHECK(cfg.federation.batch_size == 10);
  CHECK(cfg.federation.local_epochs == 1);
  CHECK(cfg.federation.sample_fraction == 0.1);
  CHECK(cfg.federation.setting == Setting::kMultiTier);
  CHECK(cfg.backbone == BackboneConfig::Toy());
  CHECK(cfg.personalize.epochs == 10);
  CHECK(cfg.model.method.kind == MethodKind::kAccumulator);
}

TEST_CASE("file values and overrides compose") {
  const auto cfg = ParseConfig(R"({"federation": {"rounds": 12, "setting": "anytime"}, "seed": 4})",
                               {{"federation.rounds", "50"}, {"adapter.method", "lw_linear"}});
  CHECK(cfg.federation.rounds == 50);
  CHECK(cfg.federation.setting == Setting::kAnytime);
  CHECK(cfg.model.method.kind == MethodKind::kLwLinear);
  CHECK(cfg.seed == 4);
  CHECK(cfg.federation.seed == 4);
  CHECK(cfg.partition.num_clients == cfg.federation.num_clients);
}

TEST_CASE("unknown keys and bad values are reported together") {
  const auto msg = ConfigError(R"({"federation": {"roundz": 3}, "sgd": {"base_lr": "fast"}})",
                               {{"adapter.method", "magic"}});
  CHECK(msg.find("federation.roundz") != std::string::npos);
  CHECK(msg.find("sgd.base_lr") != std::string::npos);
  CHECK(msg.find("magic") != std::string::npos);
}

TEST_CASE("semantic problems are rejected") {
  CHECK(ConfigError("{}", {{"federation.sample_fraction", "0"}}).find("sample_fraction") != std::string::npos);
  CHECK_FALSE(ConfigError("{}", {{"sgd.min_lr", "1"}}).empty());
  CHECK_FALSE(ConfigError("not json").empty());
  CHECK_FALSE(ConfigError("{}", {{"backbone.num_heads", "5"}}).empty());
}

TEST_CASE("the echoed config parses back to itself") {
  const auto cfg = ParseConfig(R"({"adapter": {"depth": 3, "with_pa": true}, "partition": {"alpha": 1.0}})",
                               {{"personalize.modes", R"(["client_token_only","full_adapter"])"}});
  const auto echo = ConfigToJson(cfg);
  CHECK(ConfigToJson(ParseConfig(echo, {})) == echo);
  CHECK(cfg.model.accumulator.depth == 3);
  CHECK(cfg.personalize.modes.size() == 2);
}

TEST_CASE("presets set the backbone shape") {
  const auto cfg = ParseConfig("{}", {{"backbone.preset", "deit_small_shape"}});
  CHECK(cfg.backbone == BackboneConfig::DeitSmallShape());
  const auto keys = ConfigKeys();
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK(std::find(keys.begin(), keys.end(), "federation.rounds") != keys.end());
}

}  // namespace
}  // namespace fedacc
