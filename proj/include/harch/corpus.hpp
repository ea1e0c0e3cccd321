#pragma once

// Crowd-annotated implicit relation corpora: loading delimiter-separated
// releases through a column mapping, gold distributions at all three levels,
// split handling, per-language statistics and the canonical JSONL instance
// store.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "harch/error.hpp"
#include "harch/sense_hierarchy.hpp"
#include "harch/tabular.hpp"

namespace harch {

enum class Language { kEng, kGer, kFre, kCze };
enum class Split { kTrain, kValidation, kTest };
enum class CorpusSource { kDiscoGem1, kDiscoGem2 };

inline constexpr std::array<Language, 4> kAllLanguages = {Language::kEng, Language::kGer, Language::kFre,
                                                          Language::kCze};

inline std::string_view to_string(Language lang) {
  switch (lang) {
    case Language::kEng: return "eng";
    case Language::kGer: return "ger";
    case Language::kFre: return "fre";
    case Language::kCze: return "cze";
  }
  return "?";
}

inline std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

inline std::string_view to_string(CorpusSource source) {
  return source == CorpusSource::kDiscoGem1 ? "discogem1" : "discogem2";
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline Language parse_language(std::string_view text) {
  static const std::map<std::string, Language, std::less<>> names = {
      {"eng", Language::kEng}, {"en", Language::kEng}, {"english", Language::kEng},
      {"ger", Language::kGer}, {"de", Language::kGer}, {"deu", Language::kGer},
      {"german", Language::kGer}, {"fre", Language::kFre}, {"fr", Language::kFre},
      {"fra", Language::kFre}, {"french", Language::kFre}, {"cze", Language::kCze},
      {"cs", Language::kCze}, {"ces", Language::kCze}, {"czech", Language::kCze},
  };
  auto it = names.find(ascii_lower(text));
  if (it == names.end()) fail(ErrorKind::kUnknownLanguage, "unknown language '" + std::string(text) + "'");
  return it->second;
}

inline Split parse_split(std::string_view text) {
  auto s = ascii_lower(text);
  if (s == "train" || s == "training") return Split::kTrain;
  if (s == "validation" || s == "valid" || s == "dev" || s == "development") return Split::kValidation;
  if (s == "test") return Split::kTest;
  fail(ErrorKind::kMalformedInput, "unknown split '" + std::string(text) + "'");
}

inline CorpusSource parse_source(std::string_view text) {
  auto s = ascii_lower(text);
  if (s == "discogem1") return CorpusSource::kDiscoGem1;
  if (s == "discogem2") return CorpusSource::kDiscoGem2;
  fail(ErrorKind::kConfig, "unknown corpus source '" + std::string(text) + "'");
}

inline std::set<Language> parse_languages(const std::vector<std::string>& names) {
  std::set<Language> out;
  for (const auto& n : names) {
    if (ascii_lower(n) == "all") {
      out.insert(kAllLanguages.begin(), kAllLanguages.end());
    } else {
      out.insert(parse_language(n));
    }
  }
  return out;
}

struct RelationInstance {
  std::string item_id;
  Language language = Language::kEng;
  std::string arg1;
  std::string arg2;
  Split split = Split::kTrain;
  std::array<SenseDistribution, 3> gold;  // index level - 1

  const SenseDistribution& gold_at(int level) const { return gold.at(static_cast<std::size_t>(level - 1)); }
};

// Level-1 and level-2 gold are always the marginals of the level-3 vector.
inline std::array<SenseDistribution, 3> gold_from_level3(const SenseHierarchy& hierarchy,
                                                         SenseDistribution level3) {
  auto l2 = hierarchy.aggregate_up(level3);
  auto l1 = hierarchy.aggregate_up(l2);
  return {std::move(l1), std::move(l2), std::move(level3)};
}

struct NormalizationRepair {
  std::string item_id;
  double original_sum = 0.0;
};

struct Corpus {
  std::vector<RelationInstance> instances;
  std::set<Language> languages;
  CorpusSource source = CorpusSource::kDiscoGem2;
  // Instances whose distribution sum was off by more than the silent tolerance.
  std::vector<NormalizationRepair> repairs;

  std::vector<const RelationInstance*> select(std::optional<Split> split,
                                              const std::set<Language>& langs = {}) const {
    std::vector<const RelationInstance*> out;
    for (const auto& inst : instances) {
      if (split && inst.split != *split) continue;
      if (!langs.empty() && !langs.contains(inst.language)) continue;
      out.push_back(&inst);
    }
    return out;
  }

  std::size_t count(Language lang) const {
    return static_cast<std::size_t>(
        std::count_if(instances.begin(), instances.end(), [&](const auto& i) { return i.language == lang; }));
  }
};

// Crowd votes (or any non-negative weights) over the 28 level-3 senses.
inline SenseDistribution normalize_votes(const Eigen::VectorXd& raw_votes) {
  if (raw_votes.size() != level_size(3)) fail(ErrorKind::kShapeMismatch, "votes need 28 entries");
  if ((raw_votes.array() < 0.0).any() || !raw_votes.allFinite()) {
    fail(ErrorKind::kMalformedInput, "votes must be finite and non-negative");
  }
  double total = raw_votes.sum();
  if (!(total > 0.0)) fail(ErrorKind::kAllZero, "no positive vote");
  return {3, raw_votes / total};
}

// Sums closer than this to 1 are renormalized without a log line.
inline constexpr double kSilentRenormTolerance = 1e-3;

// Which columns of a release file carry what. Parsed from JSON:
//   {"item_id": "...", "arg1": "...", "arg2": "...", "language": "..." | null,
//    "default_language": "eng", "split": "...", "values": "proportions" | "counts",
//    "delimiter": "," | "\t" (optional, else by extension),
//    "senses": {"<level-3 name>": "<column>" | null, ... all 28 ...}}
// A null sense column means the release does not annotate that sense.
struct ColumnMapping {
  std::string item_id = "itemid";
  std::string arg1 = "arg1";
  std::string arg2 = "arg2";
  std::optional<std::string> language = "lang";
  Language default_language = Language::kEng;
  std::string split = "split";
  bool counts = false;
  std::optional<char> delimiter;
  std::array<std::optional<std::string>, 28> sense_columns;

  static ColumnMapping from_json(const nlohmann::json& j, const SenseHierarchy& hierarchy) {
    static const std::set<std::string> known = {"item_id", "arg1",   "arg2",      "language", "default_language",
                                                "split",   "values", "delimiter", "senses",   "_comment"};
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) fail(ErrorKind::kConfig, "unknown column-mapping key '" + key + "'");
    }
    ColumnMapping m;
    m.item_id = j.value("item_id", m.item_id);
    m.arg1 = j.value("arg1", m.arg1);
    m.arg2 = j.value("arg2", m.arg2);
    if (j.contains("language")) {
      m.language = j["language"].is_null() ? std::nullopt : std::optional(j["language"].get<std::string>());
    }
    if (j.contains("default_language")) m.default_language = parse_language(j["default_language"].get<std::string>());
    m.split = j.value("split", m.split);
    auto values = j.value("values", std::string("proportions"));
    if (values != "proportions" && values != "counts") fail(ErrorKind::kConfig, "values must be proportions or counts");
    m.counts = values == "counts";
    if (j.contains("delimiter")) {
      auto d = j["delimiter"].get<std::string>();
      if (d.size() != 1) fail(ErrorKind::kConfig, "delimiter must be a single character");
      m.delimiter = d[0];
    }
    if (!j.contains("senses") || !j["senses"].is_object()) fail(ErrorKind::kConfig, "column mapping needs 'senses'");
    std::vector<bool> seen(28, false);
    for (const auto& [name, col] : j["senses"].items()) {
      int idx = hierarchy.index_of(3, name);
      seen[static_cast<std::size_t>(idx)] = true;
      if (!col.is_null()) m.sense_columns[static_cast<std::size_t>(idx)] = col.get<std::string>();
    }
    for (int i = 0; i < 28; ++i) {
      if (!seen[static_cast<std::size_t>(i)]) {
        fail(ErrorKind::kConfig, "column mapping lacks sense " + hierarchy.sense(3, i).display_name());
      }
    }
    return m;
  }

  static ColumnMapping load(const std::filesystem::path& path, const SenseHierarchy& hierarchy) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, path.string() + ": " + e.what());
    }
    return from_json(j, hierarchy);
  }
};

inline double parse_mass(std::string_view text, const std::string& item_id) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  if (text.empty()) return 0.0;
  std::string buf(text);
  char* end = nullptr;
  double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size() || !std::isfinite(v) || v < 0.0) {
    fail(ErrorKind::kMalformedInput, "item " + item_id + ": bad sense value '" + buf + "'");
  }
  return v;
}

// Loads a release file. Split labels come from the file; level-1/2 gold is
// recomputed from level 3. An empty language filter keeps every language.
inline Corpus load_corpus(const std::filesystem::path& path, CorpusSource source,
                          const std::set<Language>& languages_filter, const ColumnMapping& mapping,
                          const SenseHierarchy& hierarchy) {
  auto rows = parse_delimited(read_file(path), mapping.delimiter.value_or(delimiter_for(path)));
  if (rows.empty()) fail(ErrorKind::kEmptyCorpus, path.string() + " has no header");
  const Row& header = rows.front();
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorKind::kMissingColumn, "column '" + name + "' not in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_id = column(mapping.item_id);
  const auto c_arg1 = column(mapping.arg1);
  const auto c_arg2 = column(mapping.arg2);
  const auto c_split = column(mapping.split);
  std::optional<std::size_t> c_lang;
  if (mapping.language) c_lang = column(*mapping.language);
  std::array<std::optional<std::size_t>, 28> c_sense;
  for (std::size_t i = 0; i < 28; ++i) {
    if (mapping.sense_columns[i]) c_sense[i] = column(*mapping.sense_columns[i]);
  }

  Corpus corpus;
  corpus.source = source;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const Row& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != header.size()) {
      fail(ErrorKind::kMalformedInput, path.string() + " line " + std::to_string(r + 1) + ": expected " +
                                           std::to_string(header.size()) + " fields, got " +
                                           std::to_string(row.size()));
    }
    RelationInstance inst;
    inst.item_id = row[c_id];
    inst.language = c_lang ? parse_language(row[*c_lang]) : mapping.default_language;
    if (!languages_filter.empty() && !languages_filter.contains(inst.language)) continue;
    inst.arg1 = row[c_arg1];
    inst.arg2 = row[c_arg2];
    inst.split = parse_split(row[c_split]);
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(28);
    for (std::size_t i = 0; i < 28; ++i) {
      if (c_sense[i]) mass(static_cast<Eigen::Index>(i)) = parse_mass(row[*c_sense[i]], inst.item_id);
    }
    double total = mass.sum();
    if (!(total > 0.0)) fail(ErrorKind::kAllZero, "item " + inst.item_id + " has no sense mass");
    if (!mapping.counts && std::abs(total - 1.0) > kSilentRenormTolerance) {
      spdlog::warn("item {} ({}): distribution sums to {:.6f}, renormalized", inst.item_id,
                   to_string(inst.language), total);
      corpus.repairs.push_back({inst.item_id, total});
    }
    inst.gold = gold_from_level3(hierarchy, normalize_votes(mass));
    corpus.languages.insert(inst.language);
    corpus.instances.push_back(std::move(inst));
  }
  if (corpus.instances.empty()) fail(ErrorKind::kEmptyCorpus, "no instances in " + path.string() + " after filtering");

  std::map<std::pair<Language, std::string>, Split> seen;
  for (const auto& inst : corpus.instances) {
    auto [it, fresh] = seen.emplace(std::pair{inst.language, inst.item_id}, inst.split);
    if (!fresh) {
      fail(ErrorKind::kMalformedInput, "item " + inst.item_id + " (" + std::string(to_string(inst.language)) +
                                           ") appears more than once");
    }
  }
  std::map<std::string, Split> split_of;
  for (const auto& inst : corpus.instances) {
    auto [it, fresh] = split_of.emplace(inst.item_id, inst.split);
    if (!fresh && it->second != inst.split) {
      fail(ErrorKind::kMalformedInput, "item " + inst.item_id + " is in both " + std::string(to_string(it->second)) +
                                           " and " + std::string(to_string(inst.split)));
    }
  }
  return corpus;
}

// Per-language sum of each sense's gold mass at one level.
struct CorpusStats {
  int level = 1;
  std::vector<std::string> senses;
  std::vector<Language> languages;  // canonical order, only those present
  std::map<Language, Eigen::VectorXd> mass;
  std::map<Language, std::size_t> instances;

  double cell(Language lang, int sense) const {
    auto it = mass.find(lang);
    return it == mass.end() ? 0.0 : it->second(sense);
  }

  double total(Language lang) const {
    auto it = mass.find(lang);
    return it == mass.end() ? 0.0 : it->second.sum();
  }

  double all(int sense) const {
    double s = 0.0;
    for (const auto& [_, v] : mass) s += v(sense);
    return s;
  }

  // Rows: one per sense plus "Total"; columns: languages then "All".
  std::vector<Row> table(int decimals = 1) const {
    auto fmt = [&](double v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
      return std::string(buf);
    };
    std::vector<Row> rows;
    Row head{"Level-" + std::to_string(level)};
    for (auto l : languages) head.emplace_back(to_string(l));
    head.emplace_back("All");
    rows.push_back(head);
    for (std::size_t s = 0; s < senses.size(); ++s) {
      Row r{senses[s]};
      for (auto l : languages) r.push_back(fmt(cell(l, static_cast<int>(s))));
      r.push_back(fmt(all(static_cast<int>(s))));
      rows.push_back(std::move(r));
    }
    Row tot{"Total"};
    double grand = 0.0;
    for (auto l : languages) {
      tot.push_back(fmt(total(l)));
      grand += total(l);
    }
    tot.push_back(fmt(grand));
    rows.push_back(std::move(tot));
    return rows;
  }
};

inline CorpusStats corpus_stats(const Corpus& corpus, int level, const SenseHierarchy& hierarchy) {
  CorpusStats stats;
  stats.level = level;
  for (const auto& s : hierarchy.senses_at(level)) stats.senses.push_back(s.display_name());
  for (auto lang : kAllLanguages) {
    if (corpus.languages.contains(lang)) stats.languages.push_back(lang);
  }
  for (const auto& inst : corpus.instances) {
    auto [it, _] = stats.mass.try_emplace(inst.language, Eigen::VectorXd::Zero(level_size(level)));
    it->second += inst.gold_at(level).values;
    ++stats.instances[inst.language];
  }
  return stats;
}

// "ARG1<boundary>ARG2"; the boundary is the encoder's sentence-pair separator.
inline std::string encode_pair(const RelationInstance& instance, std::string_view boundary) {
  if (instance.arg1.empty() || instance.arg2.empty()) {
    fail(ErrorKind::kEmptyArgument, "item " + instance.item_id + " has an empty argument");
  }
  std::string out;
  out.reserve(instance.arg1.size() + boundary.size() + instance.arg2.size());
  out += instance.arg1;
  out += boundary;
  out += instance.arg2;
  return out;
}

// ---- canonical instance store (one JSON object per line) ----
//
// {"item_id": str, "language": "eng"|"ger"|"fre"|"cze",
//  "split": "train"|"validation"|"test", "source": "discogem1"|"discogem2",
//  "arg1": str, "arg2": str, "level1": [4], "level2": [17], "level3": [28]}
//
// level1/level2 are written for downstream readers; loading recomputes them
// from level3.

inline nlohmann::ordered_json to_json(const RelationInstance& inst, CorpusSource source) {
  auto vec = [](const SenseDistribution& d) {
    return std::vector<double>(d.values.data(), d.values.data() + d.values.size());
  };
  nlohmann::ordered_json j;
  j["item_id"] = inst.item_id;
  j["language"] = to_string(inst.language);
  j["split"] = to_string(inst.split);
  j["source"] = to_string(source);
  j["arg1"] = inst.arg1;
  j["arg2"] = inst.arg2;
  j["level1"] = vec(inst.gold[0]);
  j["level2"] = vec(inst.gold[1]);
  j["level3"] = vec(inst.gold[2]);
  return j;
}

inline std::string serialize_instances(const Corpus& corpus) {
  std::string out;
  for (const auto& inst : corpus.instances) {
    out += to_json(inst, corpus.source).dump();
    out.push_back('\n');
  }
  return out;
}

inline Corpus parse_instances(std::string_view text, const SenseHierarchy& hierarchy,
                              const std::set<Language>& languages_filter = {}) {
  Corpus corpus;
  std::size_t line_no = 0;
  bool have_source = false;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      RelationInstance inst;
      inst.item_id = j.at("item_id").get<std::string>();
      inst.language = parse_language(j.at("language").get<std::string>());
      inst.split = parse_split(j.at("split").get<std::string>());
      auto source = parse_source(j.at("source").get<std::string>());
      if (have_source && source != corpus.source) fail(ErrorKind::kMalformedInput, "mixed corpus sources");
      corpus.source = source;
      have_source = true;
      inst.arg1 = j.at("arg1").get<std::string>();
      inst.arg2 = j.at("arg2").get<std::string>();
      auto l3 = j.at("level3").get<std::vector<double>>();
      if (l3.size() != 28) fail(ErrorKind::kShapeMismatch, "level3 needs 28 entries");
      SenseDistribution d3(3, Eigen::Map<const Eigen::VectorXd>(l3.data(), 28));
      if (!d3.is_normalized(1e-6)) fail(ErrorKind::kUnnormalized, "level3 of " + inst.item_id + " is not normalized");
      if (!languages_filter.empty() && !languages_filter.contains(inst.language)) continue;
      inst.gold = gold_from_level3(hierarchy, std::move(d3));
      corpus.languages.insert(inst.language);
      corpus.instances.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kMalformedInput, "instance store line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (corpus.instances.empty()) fail(ErrorKind::kEmptyCorpus, "instance store has no (matching) instances");
  return corpus;
}

inline Corpus load_instances(const std::filesystem::path& path, const SenseHierarchy& hierarchy,
                             const std::set<Language>& languages_filter = {}) {
  return parse_instances(read_file(path), hierarchy, languages_filter);
}

}  // namespace harch
