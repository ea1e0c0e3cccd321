#pragma once

// Jensen-Shannon scoring of predicted against gold distributions, per-split
// reports, and aggregation across seeds.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "harch/corpus.hpp"
#include "harch/encoder.hpp"
#include "harch/error.hpp"
#include "harch/model.hpp"
#include "harch/sense_hierarchy.hpp"

namespace harch {

enum class JsMetric { kDistance, kDivergence };

inline constexpr double kNormalizationTolerance = 1e-6;

// Base-2 Jensen-Shannon divergence; zero entries contribute nothing.
inline double js_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) {
    fail(ErrorKind::kShapeMismatch, "JS inputs have lengths " + std::to_string(p.size()) + " and " +
                                        std::to_string(q.size()));
  }
  auto check = [](const Eigen::VectorXd& v, const char* which) {
    if (!v.allFinite() || (v.array() < 0.0).any() || std::abs(v.sum() - 1.0) > kNormalizationTolerance) {
      fail(ErrorKind::kUnnormalized, std::string(which) + " is not a probability distribution");
    }
  };
  check(p, "first JS argument");
  check(q, "second JS argument");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p(i) + q(i));
    const double tp = p(i) > 0.0 ? p(i) * std::log2(p(i) / m) : 0.0;
    const double tq = q(i) > 0.0 ? q(i) * std::log2(q(i) / m) : 0.0;
    sum += tp + tq;  // commutative per element, so js(p, q) == js(q, p) exactly
  }
  return std::clamp(0.5 * sum, 0.0, 1.0);
}

// Square root of the base-2 divergence, in [0, 1].
inline double js_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  return std::sqrt(js_divergence(p, q));
}

inline double js_distance(const SenseDistribution& p, const SenseDistribution& q) {
  if (p.level != q.level) fail(ErrorKind::kLevelMismatch, "JS distance across levels");
  return js_distance(p.values, q.values);
}

inline double js_score(const Eigen::VectorXd& p, const Eigen::VectorXd& q, JsMetric metric) {
  return metric == JsMetric::kDistance ? js_distance(p, q) : js_divergence(p, q);
}

struct InstanceScore {
  std::string item_id;
  Language language = Language::kEng;
  std::array<std::optional<double>, 3> js;
};

struct LevelSummary {
  bool present = false;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::array<LevelSummary, 3> levels;
  std::map<Language, std::array<LevelSummary, 3>> by_language;
  std::size_t instances = 0;
  // Instances that produced no prediction (e.g. exhausted LLM retries).
  std::size_t failures = 0;
  std::size_t runs = 1;
  bool single_run = true;
  bool partial = false;
  std::string model_id;
  std::string split;
  std::string config_hash;
  std::string metric = "js_distance";

  double coverage() const {
    const auto total = instances + failures;
    return total ? static_cast<double>(instances) / static_cast<double>(total) : 0.0;
  }
  bool means_defined() const { return instances > 0; }
  const LevelSummary& level(int l) const { return levels.at(static_cast<std::size_t>(l - 1)); }
};

inline nlohmann::json to_json(const LevelSummary& s) {
  if (!s.present) return nullptr;
  return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

inline LevelSummary level_summary_from_json(const nlohmann::json& j) {
  LevelSummary s;
  if (j.is_null()) return s;
  s.present = true;
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.count = j.at("count").get<std::size_t>();
  return s;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& s : r.levels) levels.push_back(to_json(s));
  nlohmann::json langs = nlohmann::json::object();
  for (const auto& [lang, arr] : r.by_language) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : arr) a.push_back(to_json(s));
    langs[std::string(to_string(lang))] = a;
  }
  return {{"levels", levels},
          {"by_language", langs},
          {"instances", r.instances},
          {"failures", r.failures},
          {"coverage", r.coverage()},
          {"runs", r.runs},
          {"single_run", r.single_run},
          {"partial", r.partial},
          {"model_id", r.model_id},
          {"split", r.split},
          {"config_hash", r.config_hash},
          {"metric", r.metric}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    for (std::size_t i = 0; i < 3; ++i) r.levels[i] = level_summary_from_json(j.at("levels").at(i));
    for (const auto& [lang, arr] : j.at("by_language").items()) {
      auto& dst = r.by_language[parse_language(lang)];
      for (std::size_t i = 0; i < 3; ++i) dst[i] = level_summary_from_json(arr.at(i));
    }
    r.instances = j.at("instances").get<std::size_t>();
    r.failures = j.at("failures").get<std::size_t>();
    r.runs = j.at("runs").get<std::size_t>();
    r.single_run = j.at("single_run").get<bool>();
    r.partial = j.at("partial").get<bool>();
    r.model_id = j.at("model_id").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kMalformedInput, std::string("bad report: ") + e.what());
  }
  return r;
}

struct ScoreOptions {
  JsMetric metric = JsMetric::kDistance;
  // When set, level-2 scores compare the reduced label distributions.
  const LabelReduction* level2_reduction = nullptr;
};

// Sum of sorted values, so means do not depend on instance order.
inline double order_free_mean(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

// Per-level arithmetic mean over whatever was scored.
inline EvalReport summarize(const std::vector<InstanceScore>& scores) {
  EvalReport r;
  r.instances = scores.size();
  std::array<std::vector<double>, 3> all;
  std::map<Language, std::array<std::vector<double>, 3>> per_lang;
  for (const auto& s : scores) {
    for (std::size_t l = 0; l < 3; ++l) {
      if (!s.js[l]) continue;
      all[l].push_back(*s.js[l]);
      per_lang[s.language][l].push_back(*s.js[l]);
    }
  }
  for (std::size_t l = 0; l < 3; ++l) {
    if (!all[l].empty()) r.levels[l] = {true, order_free_mean(all[l]), 0.0, all[l].size()};
  }
  for (const auto& [lang, arr] : per_lang) {
    auto& dst = r.by_language[lang];
    for (std::size_t l = 0; l < 3; ++l) {
      if (!arr[l].empty()) dst[l] = {true, order_free_mean(arr[l]), 0.0, arr[l].size()};
    }
  }
  return r;
}

inline std::optional<double> score_level(const SenseDistribution& gold, const Eigen::VectorXd& pred,
                                         const ScoreOptions& options) {
  if (gold.level == 2 && options.level2_reduction) {
    return js_score(options.level2_reduction->apply(SenseDistribution(2, pred)),
                    options.level2_reduction->apply(gold), options.metric);
  }
  return js_score(pred, gold.values, options.metric);
}

// Predictor returns per-level distributions, or nullopt when it could not
// produce any (counted as a failure, excluded from the means).
using Predictor = std::function<std::optional<LevelOutputs<double>>(const RelationInstance&)>;

struct EvaluationResult {
  EvalReport report;
  std::vector<InstanceScore> scores;
};

inline EvaluationResult evaluate_predictor(const std::vector<const RelationInstance*>& instances,
                                           const Predictor& predict, const ScoreOptions& options = {}) {
  if (instances.empty()) fail(ErrorKind::kEmptySplit, "nothing to evaluate after filtering");
  EvaluationResult result;
  std::size_t failures = 0;
  for (const auto* inst : instances) {
    auto outputs = predict(*inst);
    if (!outputs) {
      ++failures;
      continue;
    }
    InstanceScore score{inst->item_id, inst->language, {}};
    for (int level = 1; level <= 3; ++level) {
      const auto& out = (*outputs)[static_cast<std::size_t>(level - 1)];
      if (out) score.js[static_cast<std::size_t>(level - 1)] = score_level(inst->gold_at(level), *out, options);
    }
    result.scores.push_back(std::move(score));
  }
  result.report = summarize(result.scores);
  result.report.failures = failures;
  result.report.metric = options.metric == JsMetric::kDistance ? "js_distance" : "js_divergence";
  return result;
}

// Runs a trained model (inference mode) over one split.
template <typename Model>
EvaluationResult evaluate(const Model& model, const Encoder& encoder, const Corpus& corpus, Split split,
                          const std::set<Language>& language_filter, const ScoreOptions& options = {}) {
  auto instances = corpus.select(split, language_filter);
  auto result = evaluate_predictor(
      instances,
      [&](const RelationInstance& inst) -> std::optional<LevelOutputs<double>> {
        auto pooled = encoder.encode(encode_pair(inst, encoder.pair_boundary()), inst.item_id);
        return model.predict(pooled);
      },
      options);
  result.report.split = std::string(to_string(split));
  return result;
}

inline double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Mean of per-run means and their sample standard deviation.
inline EvalReport aggregate_runs(const std::vector<EvalReport>& reports) {
  if (reports.empty()) fail(ErrorKind::kMismatchedReports, "no reports to aggregate");
  const auto& first = reports.front();
  for (const auto& r : reports) {
    if (r.split != first.split) fail(ErrorKind::kMismatchedReports, "reports cover different splits");
    if (r.metric != first.metric) fail(ErrorKind::kMismatchedReports, "reports use different metrics");
    for (std::size_t l = 0; l < 3; ++l) {
      if (r.levels[l].present != first.levels[l].present) {
        fail(ErrorKind::kMismatchedReports, "reports cover different levels");
      }
    }
  }
  EvalReport out;
  out.split = first.split;
  out.metric = first.metric;
  out.model_id = first.model_id;
  out.config_hash = first.config_hash;
  out.instances = first.instances;
  out.failures = first.failures;
  out.runs = reports.size();
  out.single_run = reports.size() == 1;
  for (const auto& r : reports) out.partial = out.partial || r.partial;
  auto combine = [](const std::vector<const LevelSummary*>& parts) {
    LevelSummary s;
    std::vector<double> means;
    for (const auto* p : parts) {
      if (p->present) means.push_back(p->mean);
    }
    if (means.empty()) return s;
    s.present = true;
    for (double m : means) s.mean += m;
    s.mean /= static_cast<double>(means.size());
    s.std = sample_std(means);
    s.count = parts.front()->count;
    return s;
  };
  for (std::size_t l = 0; l < 3; ++l) {
    std::vector<const LevelSummary*> parts;
    for (const auto& r : reports) parts.push_back(&r.levels[l]);
    out.levels[l] = combine(parts);
  }
  std::set<Language> langs;
  for (const auto& r : reports) {
    for (const auto& [lang, _] : r.by_language) langs.insert(lang);
  }
  for (auto lang : langs) {
    for (std::size_t l = 0; l < 3; ++l) {
      std::vector<const LevelSummary*> parts;
      for (const auto& r : reports) {
        auto it = r.by_language.find(lang);
        if (it != r.by_language.end()) parts.push_back(&it->second[l]);
      }
      out.by_language[lang][l] = combine(parts);
    }
  }
  return out;
}

// "0.327 ± 0.004"
inline std::string format_mean_std(double mean, double std, int decimals = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f \xC2\xB1 %.*f", decimals, mean, decimals, std);
  return buf;
}

inline std::string format_cell(const LevelSummary& s) {
  return s.present ? format_mean_std(s.mean, s.std) : "-";
}

// One JSON object per line: item_id, language, js1, js2, js3 (null when the
// model does not predict that level).
inline std::string serialize_scores(const std::vector<InstanceScore>& scores) {
  std::string out;
  for (const auto& s : scores) {
    nlohmann::ordered_json j;
    j["item_id"] = s.item_id;
    j["language"] = to_string(s.language);
    for (std::size_t l = 0; l < 3; ++l) {
      auto key = "js" + std::to_string(l + 1);
      if (s.js[l]) j[key] = *s.js[l];
      else j[key] = nullptr;
    }
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

struct TableRow {
  std::vector<std::string> labels;  // e.g. {test language, train language, model}
  EvalReport report;
};

// Rows of labelled reports in the Level-1/2/3 result-table layout. The lowest
// mean per level column is suffixed with " *".
inline std::vector<Row> results_table(const std::vector<std::string>& label_headers,
                                      const std::vector<TableRow>& rows) {
  std::array<int, 3> best{-1, -1, -1};
  for (std::size_t l = 0; l < 3; ++l) {
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& s = rows[r].report.levels[l];
      if (s.present && s.mean < lo) {
        lo = s.mean;
        best[l] = static_cast<int>(r);
      }
    }
  }
  std::vector<Row> out;
  Row head = label_headers;
  head.insert(head.end(), {"Level-1", "Level-2", "Level-3"});
  out.push_back(head);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Row row = rows[r].labels;
    for (std::size_t l = 0; l < 3; ++l) {
      auto cell = format_cell(rows[r].report.levels[l]);
      if (best[l] == static_cast<int>(r)) cell += " *";
      row.push_back(cell);
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace harch
