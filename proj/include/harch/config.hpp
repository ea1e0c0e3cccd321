#pragma once

// Run configuration: one JSON document with fixed sections. A config file is
// merged over the defaults below, then `key.path=value` overrides are applied.
// Keys absent from the defaults are rejected; keys starting with "_" are
// treated as annotations and dropped.

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "harch/corpus.hpp"
#include "harch/encoder.hpp"
#include "harch/error.hpp"
#include "harch/evaluation.hpp"
#include "harch/hash.hpp"
#include "harch/model.hpp"
#include "harch/prompting.hpp"
#include "harch/tabular.hpp"
#include "harch/training.hpp"

namespace harch {

inline nlohmann::json default_config() {
  return nlohmann::json::parse(R"({
  "data": {
    "corpus": "",
    "source": "discogem2",
    "columns": "data/columns/discogem2.json",
    "hierarchy": "data/hierarchy.tsv",
    "reduction": "data/reduction_14.tsv",
    "reference_counts": "",
    "languages": ["all"]
  },
  "encoder": {
    "identifier": "stub",
    "dim": 768,
    "max_length": 512,
    "pooling": "auto",
    "buckets": 4096,
    "embeddings": ""
  },
  "model": {
    "architecture": "harch",
    "level": 3,
    "dropout": 0.1,
    "alpha_init": 0.25,
    "beta1_init": 0.25,
    "beta2_init": 0.25
  },
  "train": {
    "epochs": 10,
    "batch_size": 16,
    "learning_rate": 1e-5,
    "seeds": [1, 2, 3],
    "level_targets": 0,
    "freeze_encoder": false
  },
  "eval": {
    "split": "test",
    "languages": [],
    "metric": "js_distance",
    "reduce_level2": false,
    "checkpoints": []
  },
  "encoder_select": {
    "candidates": []
  },
  "llm": {
    "provider": "openai-compatible",
    "model": "gpt-4o",
    "base_url": "https://api.openai.com/v1",
    "api_key_env": "OPENAI_API_KEY",
    "temperature": 0.0,
    "max_retries": 5,
    "timeout_seconds": 60,
    "max_in_flight": 1,
    "backoff_ms": 1000,
    "setting": "eng",
    "example_count": 5,
    "prompt_seed": 0,
    "prompts": "data/prompts",
    "connectives": "data/connectives",
    "cache": "",
    "stub": ""
  },
  "stats": {
    "level": 1,
    "decimals": 1
  },
  "report": {
    "runs": []
  }
})");
}

namespace detail {

inline bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

inline void merge_into(nlohmann::json& base, const nlohmann::json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) fail(ErrorKind::kConfig, "config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : overlay.items()) {
    if (!key.empty() && key.front() == '_') continue;
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) fail(ErrorKind::kConfig, "unknown config key '" + path + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, path);
    } else if (!same_kind(slot, value)) {
      fail(ErrorKind::kConfig, "config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                                   std::string(value.type_name()));
    } else if (slot.is_number_integer() && !value.is_number_integer()) {
      fail(ErrorKind::kConfig, "config key '" + path + "' expects an integer");
    } else {
      slot = value;
    }
  }
}

inline nlohmann::json coerce_scalar(const std::string& path, const nlohmann::json& like, std::string_view text) {
  const std::string s(text);
  if (like.is_boolean()) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    fail(ErrorKind::kConfig, "override " + path + " expects true/false, got '" + s + "'");
  }
  if (like.is_number()) {
    char* end = nullptr;
    if (like.is_number_integer()) {
      long long v = std::strtoll(s.c_str(), &end, 10);
      if (s.empty() || end != s.c_str() + s.size()) {
        fail(ErrorKind::kConfig, "override " + path + " expects an integer, got '" + s + "'");
      }
      return v;
    }
    double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
      fail(ErrorKind::kConfig, "override " + path + " expects a number, got '" + s + "'");
    }
    return v;
  }
  return s;
}

}  // namespace detail

// Parses "a.b.c=value" against the current document. Lists take a JSON array
// or a comma-separated string; element types follow the existing default
// (strings when the default list is empty, unless the element is numeric).
inline void apply_override(nlohmann::json& config, std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    fail(ErrorKind::kConfig, "override must look like key=value: '" + std::string(assignment) + "'");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string_view value = assignment.substr(eq + 1);
  nlohmann::json* slot = &config;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!slot->is_object() || !slot->contains(key)) fail(ErrorKind::kConfig, "unknown config key '" + path + "'");
    slot = &(*slot)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (slot->is_object()) fail(ErrorKind::kConfig, "'" + path + "' is a section, not a value");
  if (slot->is_array()) {
    nlohmann::json parsed = nlohmann::json::array();
    if (!value.empty() && value.front() == '[') {
      try {
        parsed = nlohmann::json::parse(value);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kConfig, "override " + path + ": " + e.what());
      }
    } else {
      const nlohmann::json like = slot->empty() ? nlohmann::json("") : slot->front();
      for (const auto& item : split_list(value, ',')) parsed.push_back(detail::coerce_scalar(path, like, item));
    }
    if (!slot->empty()) {
      for (const auto& item : parsed) {
        if (!detail::same_kind(item, slot->front())) fail(ErrorKind::kConfig, "override " + path + " has mixed types");
      }
    }
    *slot = parsed;
    return;
  }
  *slot = detail::coerce_scalar(path, *slot, value);
}

// Defaults <- file (if given) <- overrides. A missing file is a config error.
inline nlohmann::json resolve_config(const std::optional<std::filesystem::path>& file,
                                     const std::vector<std::string>& overrides) {
  auto config = default_config();
  if (file) {
    if (!std::filesystem::is_regular_file(*file)) fail(ErrorKind::kConfig, "config file not found: " + file->string());
    nlohmann::json overlay;
    try {
      overlay = nlohmann::json::parse(read_file(*file));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, file->string() + ": " + e.what());
    }
    detail::merge_into(config, overlay, "");
  }
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

inline std::string config_hash(const nlohmann::json& config) { return fnv1a64_hex(config.dump()); }

// ---- typed views ----

inline EncoderConfig encoder_config(const nlohmann::json& c) { return EncoderConfig::from_json(c.at("encoder")); }

inline ModelConfig model_config(const nlohmann::json& c) { return ModelConfig::from_json(c.at("model")); }

inline std::set<Language> config_languages(const nlohmann::json& names) {
  return parse_languages(names.get<std::vector<std::string>>());
}

inline TrainConfig train_config(const nlohmann::json& c) {
  const auto& t = c.at("train");
  TrainConfig cfg;
  cfg.epochs = t.at("epochs").get<int>();
  cfg.batch_size = t.at("batch_size").get<int>();
  cfg.learning_rate = t.at("learning_rate").get<double>();
  cfg.seeds = t.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.level_targets = t.at("level_targets").get<int>();
  cfg.freeze_encoder = t.at("freeze_encoder").get<bool>();
  cfg.languages = config_languages(c.at("data").at("languages"));
  cfg.validate();
  return cfg;
}

inline JsMetric parse_metric(std::string_view s) {
  if (s == "js_distance") return JsMetric::kDistance;
  if (s == "js_divergence") return JsMetric::kDivergence;
  fail(ErrorKind::kConfig, "metric must be js_distance or js_divergence, got '" + std::string(s) + "'");
}

inline LlmClientConfig llm_client_config(const nlohmann::json& c) {
  const auto& l = c.at("llm");
  LlmClientConfig cfg;
  cfg.provider = l.at("provider").get<std::string>();
  cfg.model = l.at("model").get<std::string>();
  cfg.base_url = l.at("base_url").get<std::string>();
  cfg.api_key_env = l.at("api_key_env").get<std::string>();
  cfg.temperature = l.at("temperature").get<double>();
  cfg.max_retries = l.at("max_retries").get<int>();
  cfg.timeout_seconds = l.at("timeout_seconds").get<int>();
  cfg.max_in_flight = l.at("max_in_flight").get<int>();
  cfg.backoff_ms = l.at("backoff_ms").get<int>();
  cfg.validate();
  return cfg;
}

inline PromptConfig prompt_config(const nlohmann::json& c) {
  const auto& l = c.at("llm");
  PromptConfig cfg;
  cfg.setting = parse_language_setting(l.at("setting").get<std::string>());
  cfg.example_count = l.at("example_count").get<int>();
  cfg.seed = l.at("prompt_seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace harch
