// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/experiment/config.hpp"

#include <algorithm>
#include <functional>

#include <json.hpp>

#include "fedacc/numerics/rng.hpp"
#include "fedacc/persistence/checkpoint.hpp"

namespace fedacc {
namespace {

using json = nlohmann::json;

struct Field {
  std::function<json(const ExperimentConfig&)> get;
  // Returns an empty string on success, otherwise the reason.
  std::function<std::string(ExperimentConfig&, const json&)> set;
};

template <typename Ptr>
Field UnsignedField(Ptr ptr) {
  return {[ptr](const ExperimentConfig& c) { return json(ptr(const_cast<ExperimentConfig&>(c))); },
          [ptr](ExperimentConfig& c, const json& v) -> std::string {
            if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
              return "expected a non-negative integer, got " + v.dump();
            }
            ptr(c) = static_cast<std::remove_reference_t<decltype(ptr(c))>>(v.get<std::uint64_t>());
            return {};
          }};
}

template <typename Ptr>
Field IntField(Ptr ptr) {
  return {[ptr](const ExperimentConfig& c) { return json(ptr(const_cast<ExperimentConfig&>(c))); },
          [ptr](ExperimentConfig& c, const json& v) -> std::string {
            if (!v.is_number_integer()) return "expected an integer, got " + v.dump();
            ptr(c) = static_cast<std::remove_reference_t<decltype(ptr(c))>>(v.get<std::int64_t>());
            return {};
          }};
}

template <typename Ptr>
Field DoubleField(Ptr ptr) {
  return {[ptr](const ExperimentConfig& c) { return json(ptr(const_cast<ExperimentConfig&>(c))); },
          [ptr](ExperimentConfig& c, const json& v) -> std::string {
            if (!v.is_number()) return "expected a number, got " + v.dump();
            ptr(c) = v.get<double>();
            return {};
          }};
}

template <typename Ptr>
Field BoolField(Ptr ptr) {
  return {[ptr](const ExperimentConfig& c) { return json(ptr(const_cast<ExperimentConfig&>(c))); },
          [ptr](ExperimentConfig& c, const json& v) -> std::string {
            if (!v.is_boolean()) return "expected true or false, got " + v.dump();
            ptr(c) = v.get<bool>();
            return {};
          }};
}

template <typename Ptr>
Field StringField(Ptr ptr) {
  return {[ptr](const ExperimentConfig& c) { return json(ptr(const_cast<ExperimentConfig&>(c))); },
          [ptr](ExperimentConfig& c, const json& v) -> std::string {
            ptr(c) = v.is_string() ? v.get<std::string>() : v.dump();
            return {};
          }};
}

/// Enum stored in the config, surfaced as its string name.
template <typename Ptr, typename ToStr, typename Parse>
Field EnumField(Ptr ptr, ToStr to_str, Parse parse) {
  return {[ptr, to_str](const ExperimentConfig& c) {
            return json(std::string(to_str(ptr(const_cast<ExperimentConfig&>(c)))));
          },
          [ptr, parse](ExperimentConfig& c, const json& v) -> std::string {
            if (!v.is_string()) return "expected a string, got " + v.dump();
            try {
              ptr(c) = parse(v.get<std::string>());
            } catch (const Error& e) {
              return e.what();
            }
            return {};
          }};
}

std::string_view SchemeName(PartitionScheme s) { return s == PartitionScheme::kLda ? "lda" : "iid"; }
PartitionScheme ParseScheme(const std::string& s) {
  if (s == "lda") return PartitionScheme::kLda;
  if (s == "iid") return PartitionScheme::kIid;
  throw Error(ErrorKind::kConfig, "unknown partition scheme '" + s + "' (expected lda, iid)");
}

#define FEDACC_REF(expr) [](ExperimentConfig & c) -> auto& { return expr; }

const std::map<std::string, Field>& Registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["seed"] = UnsignedField(FEDACC_REF(c.seed));
    f["output_dir"] = StringField(FEDACC_REF(c.output_dir));
    f["backbone.preset"] = StringField(FEDACC_REF(c.backbone_preset));
    f["backbone.checkpoint"] = StringField(FEDACC_REF(c.backbone_checkpoint));
    f["backbone.depth"] = UnsignedField(FEDACC_REF(c.backbone.depth));
    f["backbone.embed_dim"] = UnsignedField(FEDACC_REF(c.backbone.embed_dim));
    f["backbone.num_heads"] = UnsignedField(FEDACC_REF(c.backbone.num_heads));
    f["backbone.mlp_ratio"] = UnsignedField(FEDACC_REF(c.backbone.mlp_ratio));
    f["backbone.patch_size"] = UnsignedField(FEDACC_REF(c.backbone.patch_size));
    f["backbone.image_side"] = UnsignedField(FEDACC_REF(c.backbone.image_side));
    f["backbone.channels"] = UnsignedField(FEDACC_REF(c.backbone.channels));
    f["backbone.pretrain_classes"] = UnsignedField(FEDACC_REF(c.backbone.pretrain_classes));

    f["pretrain.epochs"] = UnsignedField(FEDACC_REF(c.pretrain.options.epochs));
    f["pretrain.batch_size"] = UnsignedField(FEDACC_REF(c.pretrain.options.batch_size));
    f["pretrain.lr"] = DoubleField(FEDACC_REF(c.pretrain.options.lr));
    f["pretrain.momentum"] = DoubleField(FEDACC_REF(c.pretrain.options.momentum));
    f["pretrain.holdout_fraction"] = DoubleField(FEDACC_REF(c.pretrain.options.holdout_fraction));
    f["pretrain.accuracy_floor"] = DoubleField(FEDACC_REF(c.pretrain.options.accuracy_floor));
    f["pretrain.n"] = UnsignedField(FEDACC_REF(c.pretrain.n));
    f["pretrain.cluster_std"] = DoubleField(FEDACC_REF(c.pretrain.cluster_std));
    f["pretrain.label_map_seed"] = UnsignedField(FEDACC_REF(c.pretrain.label_map_seed));
    f["pretrain.noise_seed"] = UnsignedField(FEDACC_REF(c.pretrain.noise_seed));

    f["dataset.source"] = StringField(FEDACC_REF(c.dataset.source));
    f["dataset.synthetic.num_classes"] = IntField(FEDACC_REF(c.dataset.synthetic.num_classes));
    f["dataset.synthetic.n_train"] = UnsignedField(FEDACC_REF(c.dataset.synthetic.n_train));
    f["dataset.synthetic.n_test"] = UnsignedField(FEDACC_REF(c.dataset.synthetic.n_test));
    f["dataset.synthetic.cluster_std"] = DoubleField(FEDACC_REF(c.dataset.synthetic.cluster_std));
    f["dataset.synthetic.label_map_seed"] = UnsignedField(FEDACC_REF(c.dataset.synthetic.label_map_seed));
    f["dataset.synthetic.noise_seed"] = UnsignedField(FEDACC_REF(c.dataset.synthetic.noise_seed));
    f["dataset.idx.train_images"] = StringField(FEDACC_REF(c.dataset.train_images));
    f["dataset.idx.train_labels"] = StringField(FEDACC_REF(c.dataset.train_labels));
    f["dataset.idx.test_images"] = StringField(FEDACC_REF(c.dataset.test_images));
    f["dataset.idx.test_labels"] = StringField(FEDACC_REF(c.dataset.test_labels));

    f["partition.scheme"] = EnumField(FEDACC_REF(c.partition.scheme), SchemeName, ParseScheme);
    f["partition.alpha"] = DoubleField(FEDACC_REF(c.partition.alpha));

    f["federation.num_clients"] = UnsignedField(FEDACC_REF(c.federation.num_clients));
    f["federation.sample_fraction"] = DoubleField(FEDACC_REF(c.federation.sample_fraction));
    f["federation.rounds"] = UnsignedField(FEDACC_REF(c.federation.rounds));
    f["federation.local_epochs"] = UnsignedField(FEDACC_REF(c.federation.local_epochs));
    f["federation.batch_size"] = UnsignedField(FEDACC_REF(c.federation.batch_size));
    f["federation.setting"] = EnumField(FEDACC_REF(c.federation.setting),
                                        [](Setting s) { return ToString(s); },
                                        [](const std::string& s) { return ParseSetting(s); });
    f["federation.eval_every"] = UnsignedField(FEDACC_REF(c.federation.eval_every));
    f["federation.both_directions"] = BoolField(FEDACC_REF(c.federation.both_directions));
    f["federation.jobs"] = UnsignedField(FEDACC_REF(c.federation.jobs));

    f["sgd.base_lr"] = DoubleField(FEDACC_REF(c.sgd.base_lr));
    f["sgd.min_lr"] = DoubleField(FEDACC_REF(c.sgd.min_lr));
    f["sgd.momentum"] = DoubleField(FEDACC_REF(c.sgd.momentum));

    f["adapter.method"] = EnumField(FEDACC_REF(c.model.method.kind),
                                    [](MethodKind k) { return ToString(k); },
                                    [](const std::string& s) { return ParseMethodKind(s); });
    f["adapter.with_pa"] = BoolField(FEDACC_REF(c.model.method.with_pa));
    f["adapter.depth"] = UnsignedField(FEDACC_REF(c.model.accumulator.depth));
    f["adapter.replace"] = BoolField(FEDACC_REF(c.model.accumulator.replace));
    f["adapter.residual"] = BoolField(FEDACC_REF(c.model.accumulator.residual));
    f["adapter.tap_tokenizer"] = BoolField(FEDACC_REF(c.model.accumulator.tap_tokenizer));
    f["adapter.head_kind"] = EnumField(FEDACC_REF(c.model.accumulator.head_kind),
                                       [](HeadKind k) { return ToString(k); },
                                       [](const std::string& s) { return ParseHeadKind(s); });
    f["adapter.pa_rank"] = UnsignedField(FEDACC_REF(c.model.parallel_adapter.rank));
    f["adapter.pa_scale"] = DoubleField(FEDACC_REF(c.model.parallel_adapter.scale));
    f["adapter.layerwise_dropout"] = DoubleField(FEDACC_REF(c.model.layerwise_dropout));

    f["personalize.modes"] = {
        [](const ExperimentConfig& c) {
          json arr = json::array();
          for (auto m : c.personalize.modes) arr.push_back(std::string(ToString(m)));
          return arr;
        },
        [](ExperimentConfig& c, const json& v) -> std::string {
          json arr = v.is_string() ? json::array({v}) : v;
          if (!arr.is_array()) return "expected a list of mode names, got " + v.dump();
          std::vector<PersonalizeMode> modes;
          for (const auto& m : arr) {
            if (!m.is_string()) return "expected mode names, got " + m.dump();
            try {
              modes.push_back(ParsePersonalizeMode(m.get<std::string>()));
            } catch (const Error& e) {
              return e.what();
            }
          }
          c.personalize.modes = std::move(modes);
          return {};
        }};
    f["personalize.epochs"] = UnsignedField(FEDACC_REF(c.personalize.epochs));
    f["personalize.batch_size"] = UnsignedField(FEDACC_REF(c.personalize.batch_size));
    f["personalize.lr"] = DoubleField(FEDACC_REF(c.personalize.lr));
    f["personalize.severity"] = IntField(FEDACC_REF(c.personalize.severity));
    f["personalize.num_clients"] = UnsignedField(FEDACC_REF(c.personalize.num_clients));
    f["personalize.holdout_fraction"] = DoubleField(FEDACC_REF(c.personalize.holdout_fraction));
    f["personalize.corruption_seed"] = UnsignedField(FEDACC_REF(c.personalize.corruption_seed));

    f["report.target"] = DoubleField(FEDACC_REF(c.report_target));
    return f;
  }();
  return fields;
}

#undef FEDACC_REF

void Flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  if (node.is_object() && !(prefix.empty() ? false : Registry().count(prefix))) {
    for (const auto& [k, v] : node.items()) Flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  out.emplace_back(prefix, node);
}

void SetPath(json& root, const std::string& dotted, json value) {
  json* node = &root;
  std::size_t start = 0;
  for (std::size_t dot; (dot = dotted.find('.', start)) != std::string::npos; start = dot + 1) {
    node = &(*node)[dotted.substr(start, dot - start)];
  }
  (*node)[dotted.substr(start)] = std::move(value);
}

bool ApplyPreset(ExperimentConfig& cfg, const std::string& preset) {
  if (preset == "toy") {
    cfg.backbone = BackboneConfig::Toy();
  } else if (preset == "deit_small_shape") {
    cfg.backbone = BackboneConfig::DeitSmallShape();
  } else if (preset != "custom") {
    return false;
  }
  cfg.backbone_preset = preset;
  return true;
}

}  // namespace

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : Registry()) keys.push_back(k);
  return keys;
}

std::string ConfigToJson(const ExperimentConfig& cfg) {
  json root = json::object();
  for (const auto& [key, field] : Registry()) SetPath(root, key, field.get(cfg));
  return root.dump(2) + "\n";
}

std::vector<std::string> ExperimentConfig::Problems() const {
  std::vector<std::string> p;
  // Validators report "header:\n  problem\n  problem"; keep the problem lines.
  auto capture = [&](const auto& fn) {
    try {
      fn();
    } catch (const Error& e) {
      const std::string msg = e.what();
      if (msg.find('\n') == std::string::npos) {
        p.push_back(msg);
        return;
      }
      std::size_t start = msg.find('\n') + 1;
      while (start <= msg.size()) {
        std::size_t nl = msg.find('\n', start);
        if (nl == std::string::npos) nl = msg.size();
        std::string line = msg.substr(start, nl - start);
        line.erase(0, line.find_first_not_of(' '));
        if (!line.empty()) p.push_back(line);
        start = nl + 1;
      }
    }
  };
  capture([&] { backbone.Validate(); });
  capture([&] { federation.Validate(); });
  capture([&] { sgd.Validate(); });
  if (backbone_preset != "toy" && backbone_preset != "deit_small_shape" && backbone_preset != "custom") {
    p.push_back("backbone.preset must be toy, deit_small_shape or custom");
  }
  if (output_dir.empty()) p.push_back("output_dir must not be empty");
  if (pretrain.options.batch_size < 1) p.push_back("pretrain.batch_size must be >= 1");
  if (!(pretrain.options.lr > 0)) p.push_back("pretrain.lr must be > 0");
  if (pretrain.options.momentum < 0 || pretrain.options.momentum >= 1) p.push_back("pretrain.momentum must lie in [0, 1)");
  if (pretrain.options.holdout_fraction <= 0 || pretrain.options.holdout_fraction >= 1) {
    p.push_back("pretrain.holdout_fraction must lie in (0, 1)");
  }
  if (pretrain.n < backbone.pretrain_classes) p.push_back("pretrain.n must be >= backbone.pretrain_classes");
  if (pretrain.cluster_std < 0) p.push_back("pretrain.cluster_std must be >= 0");

  if (dataset.source == "synthetic") {
    const auto& s = dataset.synthetic;
    if (s.num_classes < 2) p.push_back("dataset.synthetic.num_classes must be >= 2");
    if (s.n_train < federation.num_clients) p.push_back("dataset.synthetic.n_train must be >= federation.num_clients");
    if (s.n_test < 1) p.push_back("dataset.synthetic.n_test must be >= 1");
    if (s.cluster_std < 0) p.push_back("dataset.synthetic.cluster_std must be >= 0");
    if (s.label_map_seed == pretrain.label_map_seed) {
      p.push_back("dataset.synthetic.label_map_seed must differ from pretrain.label_map_seed");
    }
  } else if (dataset.source == "idx") {
    for (const auto& [key, path] : {std::pair{"train_images", &dataset.train_images},
                                    std::pair{"train_labels", &dataset.train_labels},
                                    std::pair{"test_images", &dataset.test_images},
                                    std::pair{"test_labels", &dataset.test_labels}}) {
      if (path->empty()) p.push_back(std::string("dataset.idx.") + key + " is required when dataset.source is idx");
    }
  } else {
    p.push_back("dataset.source must be synthetic or idx");
  }
  if (!(partition.alpha > 0)) p.push_back("partition.alpha must be > 0");
  if (federation.setting == Setting::kMultiTier && federation.num_clients < backbone.depth) {
    p.push_back("federation.num_clients must be >= backbone.depth for multi_tier");
  }
  if (model.accumulator.depth < 1) p.push_back("adapter.depth must be >= 1");
  if (model.parallel_adapter.scale < 0) p.push_back("adapter.pa_scale must be >= 0");
  if (model.layerwise_dropout < 0 || model.layerwise_dropout >= 1) p.push_back("adapter.layerwise_dropout must lie in [0, 1)");
  if (personalize.modes.empty()) p.push_back("personalize.modes must not be empty");
  if (personalize.batch_size < 1) p.push_back("personalize.batch_size must be >= 1");
  if (personalize.lr < 0) p.push_back("personalize.lr must be >= 0");
  if (personalize.severity < 0 || personalize.severity > 5) p.push_back("personalize.severity must lie in [0, 5]");
  if (personalize.num_clients < 1 || personalize.num_clients > federation.num_clients) {
    p.push_back("personalize.num_clients must lie in [1, federation.num_clients]");
  }
  if (personalize.holdout_fraction <= 0 || personalize.holdout_fraction >= 1) {
    p.push_back("personalize.holdout_fraction must lie in (0, 1)");
  }
  if (report_target > 1) p.push_back("report.target must be <= 1 (negative selects the layer-wise linear best)");
  return p;
}

void ExperimentConfig::Validate() const {
  const auto problems = Problems();
  if (problems.empty()) return;
  std::string msg = "invalid config (" + std::to_string(problems.size()) + (problems.size() == 1 ? " problem):" : " problems):");
  for (const auto& line : problems) msg += "\n  " + line;
  throw Error(ErrorKind::kConfig, msg);
}

std::filesystem::path ExperimentConfig::backbone_path() const {
  if (!backbone_checkpoint.empty()) return backbone_checkpoint;
  return std::filesystem::path(output_dir) / "backbone.ckpt";
}

ExperimentConfig ParseConfig(const std::string& json_text,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::vector<std::string> problems;
  std::vector<std::pair<std::string, json>> entries;
  if (!json_text.empty()) {
    json root;
    try {
      root = json::parse(json_text);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw Error(ErrorKind::kConfig, "config must be a JSON object");
    Flatten(root, "", entries);
  }
  for (const auto& [key, raw] : overrides) {
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    entries.emplace_back(key, std::move(value));
  }

  ExperimentConfig cfg;
  // The preset must land before individual backbone.* keys.
  for (const auto& [key, value] : entries) {
    if (key != "backbone.preset") continue;
    if (!value.is_string() || !ApplyPreset(cfg, value.get<std::string>())) {
      problems.push_back("backbone.preset: expected toy, deit_small_shape or custom, got " + value.dump());
    }
  }
  for (const auto& [key, value] : entries) {
    if (key == "backbone.preset") continue;
    auto it = Registry().find(key);
    if (it == Registry().end()) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    if (std::string why = it->second.set(cfg, value); !why.empty()) problems.push_back(key + ": " + why);
  }
  if (problems.empty()) {
    for (auto& p : cfg.Problems()) problems.push_back(std::move(p));
  }
  if (!problems.empty()) {
    std::string msg = "invalid config (" + std::to_string(problems.size()) + (problems.size() == 1 ? " problem):" : " problems):");
    for (const auto& line : problems) msg += "\n  " + line;
    throw Error(ErrorKind::kConfig, msg);
  }
  cfg.model.num_classes = static_cast<std::size_t>(cfg.dataset.synthetic.num_classes);
  cfg.partition.num_clients = cfg.federation.num_clients;
  cfg.partition.seed = DeriveSeed(cfg.seed, {0x9a27});
  cfg.federation.seed = cfg.seed;
  return cfg;
}

ExperimentConfig LoadConfig(const std::filesystem::path& file,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
  return ParseConfig(file.empty() ? std::string() : ReadFile(file), overrides);
}

}  // namespace fedacc
