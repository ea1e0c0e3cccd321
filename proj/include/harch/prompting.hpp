#pragma once

// Few-shot LLM benchmarking through the connective proxy task: the model is
// shown the ordered list of 28 connectives and answers with a probability
// vector over them, which maps one-to-one onto level-3 senses.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "harch/corpus.hpp"
#include "harch/error.hpp"
#include "harch/evaluation.hpp"
#include "harch/hash.hpp"
#include "harch/nn.hpp"
#include "harch/sense_hierarchy.hpp"
#include "harch/tabular.hpp"

namespace harch {

// ---- LLM client interface ----

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
};

struct ChatRequest {
  std::string model;
  double temperature = 0.0;
  std::vector<ChatMessage> messages;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"model", model}, {"temperature", temperature}, {"messages", msgs}};
  }

  std::string hash() const { return fnv1a64_hex(to_json().dump()); }
};

// Implementations must be safe to call from several threads at once and
// signal transport problems with ErrorKind::kTransportError.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

// Wraps a callable; counts calls. Used for offline stubs.
class FunctionClient final : public LlmClient {
 public:
  explicit FunctionClient(std::function<std::string(const ChatRequest&)> fn) : fn_(std::move(fn)) {}

  std::string complete(const ChatRequest& request) override {
    ++calls_;
    return fn_(request);
  }

  int calls() const { return calls_.load(); }

 private:
  std::function<std::string(const ChatRequest&)> fn_;
  std::atomic<int> calls_{0};
};

struct LlmClientConfig {
  std::string provider = "openai-compatible";
  std::string model = "gpt-4o";
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int max_retries = 5;
  int timeout_seconds = 60;
  int max_in_flight = 1;
  int backoff_ms = 1000;  // base delay after a transport error, doubled per attempt

  void validate() const {
    if (temperature != 0.0) fail(ErrorKind::kConfig, "LLM temperature is fixed at 0");
    if (max_retries < 0 || max_retries > 5) fail(ErrorKind::kConfig, "max_retries must be within [0, 5]");
    if (max_in_flight < 1) fail(ErrorKind::kConfig, "max_in_flight must be at least 1");
    if (timeout_seconds < 1) fail(ErrorKind::kConfig, "timeout_seconds must be positive");
    if (backoff_ms < 0) fail(ErrorKind::kConfig, "backoff_ms must be non-negative");
  }
};

// ---- response parsing ----

enum class ParseFailure { kNone, kNoVectorFound, kWrongLength, kNegativeEntry, kNonFiniteEntry, kBadSum };

inline std::string_view to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::kNone: return "ok";
    case ParseFailure::kNoVectorFound: return "NoVectorFound";
    case ParseFailure::kWrongLength: return "WrongLength";
    case ParseFailure::kNegativeEntry: return "NegativeEntry";
    case ParseFailure::kNonFiniteEntry: return "NonFiniteEntry";
    case ParseFailure::kBadSum: return "BadSum";
  }
  return "?";
}

inline constexpr int kConnectiveCount = ConnectiveMap::kSize;
inline constexpr double kAnswerSumTolerance = 1e-3;

struct ParsedVector {
  ParseFailure failure = ParseFailure::kNone;
  std::string detail;
  Eigen::VectorXd values;  // renormalized, set when failure == kNone

  bool ok() const { return failure == ParseFailure::kNone; }
};

namespace detail {

inline std::optional<double> parse_number(std::string_view token) {
  while (!token.empty() && std::isspace(static_cast<unsigned char>(token.front()))) token.remove_prefix(1);
  while (!token.empty() && std::isspace(static_cast<unsigned char>(token.back()))) token.remove_suffix(1);
  if (token.empty()) return std::nullopt;
  std::string buf(token);
  char* end = nullptr;
  double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// Takes the first bracketed, comma-separated numeric list in the text.
inline ParsedVector parse_vector(std::string_view response) {
  ParsedVector out;
  std::size_t pos = 0;
  while ((pos = response.find('[', pos)) != std::string_view::npos) {
    auto close = response.find(']', pos + 1);
    if (close == std::string_view::npos) break;
    auto body = response.substr(pos + 1, close - pos - 1);
    std::vector<double> numbers;
    bool numeric = true;
    auto blank = body.find_first_not_of(" \t\r\n") == std::string_view::npos;
    if (!blank) {
      std::size_t start = 0;
      while (start <= body.size()) {
        auto comma = body.find(',', start);
        if (comma == std::string_view::npos) comma = body.size();
        auto v = detail::parse_number(body.substr(start, comma - start));
        if (!v) {
          numeric = false;
          break;
        }
        numbers.push_back(*v);
        start = comma + 1;
      }
    }
    if (!numeric) {
      pos = pos + 1;
      continue;
    }
    if (static_cast<int>(numbers.size()) != kConnectiveCount) {
      out.failure = ParseFailure::kWrongLength;
      out.detail = "expected " + std::to_string(kConnectiveCount) + " entries, got " + std::to_string(numbers.size());
      return out;
    }
    double sum = 0.0;
    for (double v : numbers) {
      if (!std::isfinite(v)) {
        out.failure = ParseFailure::kNonFiniteEntry;
        out.detail = "non-finite entry";
        return out;
      }
      if (v < 0.0) {
        out.failure = ParseFailure::kNegativeEntry;
        out.detail = "negative entry " + std::to_string(v);
        return out;
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kAnswerSumTolerance) {
      out.failure = ParseFailure::kBadSum;
      out.detail = "entries sum to " + std::to_string(sum);
      return out;
    }
    out.values = Eigen::Map<Eigen::VectorXd>(numbers.data(), kConnectiveCount) / sum;
    return out;
  }
  out.failure = ParseFailure::kNoVectorFound;
  out.detail = "no bracketed numeric list";
  return out;
}

// Connective-order vector -> gold-style distributions at all three levels.
inline std::array<SenseDistribution, 3> connective_to_senses(const Eigen::VectorXd& by_connective,
                                                             const ConnectiveMap* map,
                                                             const SenseHierarchy& hierarchy) {
  if (!map || map->empty()) fail(ErrorKind::kMissingConnectiveMap, "no connective map for this setting");
  if (by_connective.size() != kConnectiveCount) fail(ErrorKind::kShapeMismatch, "connective vector needs 28 entries");
  return gold_from_level3(hierarchy, SenseDistribution(3, map->to_sense_order(by_connective)));
}

// "[0.0, 0.111, 0.667]": three decimals, trailing zeros trimmed to one.
inline std::string render_vector(const Eigen::VectorXd& v) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v(i) == 0.0 ? 0.0 : v(i));
    std::string s(buf);
    while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
    out += s;
  }
  out += "]";
  return out;
}

// ---- templates ----

enum class LanguageSetting { kEng, kGer, kFre, kCze, kMultilingual };

inline LanguageSetting parse_language_setting(std::string_view s) {
  auto lower = ascii_lower(s);
  if (lower == "multilingual" || lower == "all") return LanguageSetting::kMultilingual;
  switch (parse_language(lower)) {
    case Language::kEng: return LanguageSetting::kEng;
    case Language::kGer: return LanguageSetting::kGer;
    case Language::kFre: return LanguageSetting::kFre;
    case Language::kCze: return LanguageSetting::kCze;
  }
  return LanguageSetting::kEng;
}

inline std::string_view to_string(LanguageSetting s) {
  switch (s) {
    case LanguageSetting::kEng: return "eng";
    case LanguageSetting::kGer: return "ger";
    case LanguageSetting::kFre: return "fre";
    case LanguageSetting::kCze: return "cze";
    case LanguageSetting::kMultilingual: return "multilingual";
  }
  return "?";
}

// Scaffold language: the setting's own language, English for multilingual.
inline Language scaffold_language(LanguageSetting s) {
  switch (s) {
    case LanguageSetting::kGer: return Language::kGer;
    case LanguageSetting::kFre: return Language::kFre;
    case LanguageSetting::kCze: return Language::kCze;
    default: return Language::kEng;
  }
}

inline std::set<Language> setting_languages(LanguageSetting s) {
  if (s == LanguageSetting::kMultilingual) return {kAllLanguages.begin(), kAllLanguages.end()};
  return {scaffold_language(s)};
}

// The wording of one language's prompt. Fields may reference {connectives},
// {arg1}, {arg2} and {answer}; see data/prompts/eng.json.
struct PromptText {
  std::string system;
  std::string examples_intro;
  std::string example;
  std::string example_separator = "\n\n";
  std::string acknowledgement;
  std::string query;

  static PromptText from_json(const nlohmann::json& j) {
    PromptText t;
    try {
      t.system = j.at("system").get<std::string>();
      t.examples_intro = j.at("examples_intro").get<std::string>();
      t.example = j.at("example").get<std::string>();
      t.example_separator = j.value("example_separator", t.example_separator);
      t.acknowledgement = j.at("acknowledgement").get<std::string>();
      t.query = j.at("query").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, std::string("bad prompt text: ") + e.what());
    }
    return t;
  }

  static PromptText load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kConfig, path.string() + ": " + e.what());
    }
  }
};

// Single left-to-right pass: substituted values are never rescanned, so an
// argument that happens to contain "{answer}" stays literal.
inline std::string substitute(std::string_view text, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      auto close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = vars.find(std::string(text.substr(i + 1, close - i - 1)));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

// ["a", "b", ...] with JSON string escaping.
inline std::string render_connectives(const ConnectiveMap& map) {
  std::string out = "[";
  for (std::size_t i = 0; i < map.connectives().size(); ++i) {
    if (i) out += ", ";
    out += nlohmann::json(map.connectives()[i]).dump();
  }
  out += "]";
  return out;
}

struct FewShotExample {
  std::string item_id;
  Language language = Language::kEng;
  std::string arg1;
  std::string arg2;
  Eigen::VectorXd answer;  // gold level-3 mass in connective order
};

struct PromptTemplate {
  LanguageSetting setting = LanguageSetting::kEng;
  ConnectiveMap connectives;
  PromptText text;
  std::string system_message;
  std::vector<FewShotExample> few_shot;
  int example_count = 5;

  // System message, the examples in one user turn, the acknowledgement, then
  // the query for this instance.
  std::vector<ChatMessage> messages_for(const RelationInstance& instance) const {
    std::vector<ChatMessage> out;
    out.push_back({"system", system_message});
    out.push_back({"user", examples_message()});
    out.push_back({"assistant", text.acknowledgement});
    out.push_back({"user", substitute(text.query, {{"arg1", instance.arg1}, {"arg2", instance.arg2}})});
    return out;
  }

  std::string examples_message() const {
    std::string body = text.examples_intro;
    for (const auto& ex : few_shot) {
      body += text.example_separator;
      body += substitute(text.example, {{"arg1", ex.arg1}, {"arg2", ex.arg2}, {"answer", render_vector(ex.answer)}});
    }
    return body;
  }

  // Identifies the fixed part of every request.
  std::string hash() const {
    return fnv1a64_hex(system_message + '\x1f' + examples_message() + '\x1f' + text.acknowledgement + '\x1f' +
                       text.query);
  }
};

struct PromptResources {
  const SenseHierarchy* hierarchy = nullptr;
  std::map<Language, ConnectiveMap> connective_maps;
  std::map<Language, PromptText> texts;
};

struct PromptConfig {
  LanguageSetting setting = LanguageSetting::kEng;
  int example_count = 5;
  std::uint64_t seed = 0;
};

// Few-shot examples are a seeded sample of the training split; the
// multilingual setting takes them round-robin across languages.
inline PromptTemplate build_prompt(const PromptConfig& config, const PromptResources& resources, const Corpus& corpus) {
  if (config.example_count < 0) fail(ErrorKind::kConfig, "example_count must be non-negative");
  const Language scaffold = scaffold_language(config.setting);
  auto map_it = resources.connective_maps.find(scaffold);
  if (map_it == resources.connective_maps.end()) {
    fail(ErrorKind::kMissingConnectiveMap, "no connective map for " + std::string(to_string(scaffold)));
  }
  auto text_it = resources.texts.find(scaffold);
  if (text_it == resources.texts.end()) {
    fail(ErrorKind::kMissingConnectiveMap, "no prompt text for " + std::string(to_string(scaffold)));
  }

  PromptTemplate t;
  t.setting = config.setting;
  t.connectives = map_it->second;
  t.text = text_it->second;
  t.example_count = config.example_count;
  t.system_message = substitute(t.text.system, {{"connectives", render_connectives(t.connectives)}});

  std::vector<Language> langs;
  for (auto lang : kAllLanguages) {
    if (setting_languages(config.setting).contains(lang) && corpus.languages.contains(lang)) langs.push_back(lang);
  }
  if (langs.empty() && config.example_count > 0) {
    fail(ErrorKind::kInsufficientExamples, "corpus has no training data for this setting");
  }
  std::map<Language, std::vector<const RelationInstance*>> pools;
  for (auto lang : langs) pools[lang] = corpus.select(Split::kTrain, {lang});
  std::map<Language, int> needed;
  for (int i = 0; i < config.example_count; ++i) ++needed[langs[static_cast<std::size_t>(i) % langs.size()]];
  for (const auto& [lang, n] : needed) {
    if (static_cast<int>(pools[lang].size()) < n) {
      fail(ErrorKind::kInsufficientExamples, "need " + std::to_string(n) + " " + std::string(to_string(lang)) +
                                                 " training examples, have " + std::to_string(pools[lang].size()));
    }
  }
  Rng rng(config.seed);
  std::map<Language, std::size_t> taken;
  for (int i = 0; i < config.example_count; ++i) {
    const auto lang = langs[static_cast<std::size_t>(i) % langs.size()];
    auto& pool = pools[lang];
    auto& k = taken[lang];
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
    const auto* inst = pool[k++];
    t.few_shot.push_back({inst->item_id, inst->language, inst->arg1, inst->arg2,
                          t.connectives.to_connective_order(inst->gold_at(3).values)});
  }
  return t;
}

// ---- transcript cache ----

struct Attempt {
  std::string key;
  std::string model;
  std::string template_hash;
  std::string item_id;
  int attempt = 0;
  std::string request_hash;
  std::string raw_response;
  std::string outcome;  // "ok", a ParseFailure name, or "TransportError"
};

inline nlohmann::ordered_json to_json(const Attempt& a) {
  return {{"key", a.key},
          {"model", a.model},
          {"template_hash", a.template_hash},
          {"item_id", a.item_id},
          {"attempt", a.attempt},
          {"request_hash", a.request_hash},
          {"raw_response", a.raw_response},
          {"outcome", a.outcome}};
}

inline std::string cache_key(std::string_view model, std::string_view template_hash, std::string_view item_id) {
  return fnv1a64_hex(std::string(model) + '\x1f' + std::string(template_hash) + '\x1f' + std::string(item_id));
}

// Append-only JSONL log of every request attempt, keyed by
// (model, template hash, item id). Each record is written with one write
// call under a lock and flushed.
class TranscriptCache {
 public:
  TranscriptCache() = default;

  explicit TranscriptCache(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) return;
    auto text = read_file(path_);
    std::size_t start = 0, line_no = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      std::string_view line(text.data() + start, end - start);
      start = end + 1;
      ++line_no;
      if (line.empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        Attempt a{j.at("key"),     j.at("model"),       j.at("template_hash"), j.at("item_id"),
                  j.at("attempt"), j.at("request_hash"), j.at("raw_response"),  j.at("outcome")};
        entries_[a.key].push_back(std::move(a));
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kMalformedInput, path_.string() + " line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  bool persistent() const { return !path_.empty(); }

  std::vector<Attempt> lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    return it == entries_.end() ? std::vector<Attempt>{} : it->second;
  }

  void append(const Attempt& a) {
    std::lock_guard lock(mutex_);
    entries_[a.key].push_back(a);
    if (path_.empty()) return;
    if (!out_.is_open()) {
      if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
      out_.open(path_, std::ios::binary | std::ios::app);
      if (!out_) fail(ErrorKind::kIo, "cannot append to " + path_.string());
    }
    auto line = to_json(a).dump() + "\n";
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
  }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<Attempt>> entries_;
  std::ofstream out_;
};

enum class QueryStatus { kOk, kExhaustedRetries };

struct QueryResult {
  QueryStatus status = QueryStatus::kOk;
  Eigen::VectorXd vector;  // connective order, when ok
  int network_calls = 0;
  bool from_cache = false;
  std::vector<Attempt> transcript;

  bool ok() const { return status == QueryStatus::kOk; }
};

// Sends the templated request, re-issuing it on malformed answers or
// transport errors up to max_retries more times. Finished transcripts in the
// cache are replayed without touching the client.
inline QueryResult query_instance(LlmClient& client, const LlmClientConfig& config, const PromptTemplate& prompt,
                                  const RelationInstance& instance, TranscriptCache& cache) {
  config.validate();
  if (instance.arg1.empty() || instance.arg2.empty()) {
    fail(ErrorKind::kEmptyArgument, "item " + instance.item_id + " has an empty argument");
  }
  const int budget = config.max_retries + 1;
  const auto template_hash = prompt.hash();
  const auto key = cache_key(config.model, template_hash, instance.item_id);
  QueryResult result;
  result.transcript = cache.lookup(key);
  auto finish_from = [&](const Attempt& last) -> bool {
    if (last.outcome == "ok") {
      auto parsed = parse_vector(last.raw_response);
      if (!parsed.ok()) fail(ErrorKind::kMalformedInput, "cached ok transcript no longer parses for " + instance.item_id);
      result.vector = parsed.values;
      result.status = QueryStatus::kOk;
      return true;
    }
    if (static_cast<int>(result.transcript.size()) >= budget) {
      result.status = QueryStatus::kExhaustedRetries;
      return true;
    }
    return false;
  };
  if (!result.transcript.empty() && finish_from(result.transcript.back())) {
    result.from_cache = true;
    return result;
  }

  ChatRequest request{config.model, config.temperature, prompt.messages_for(instance)};
  const auto request_hash = request.hash();
  while (static_cast<int>(result.transcript.size()) < budget) {
    Attempt a{key, config.model, template_hash, instance.item_id, static_cast<int>(result.transcript.size()) + 1,
              request_hash, "", ""};
    ++result.network_calls;
    try {
      a.raw_response = client.complete(request);
      auto parsed = parse_vector(a.raw_response);
      a.outcome = std::string(to_string(parsed.failure));
      if (parsed.ok()) a.outcome = "ok";
      else spdlog::debug("item {} attempt {}: {}", instance.item_id, a.attempt, parsed.detail);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kTransportError) throw;
      a.outcome = "TransportError";
      spdlog::warn("item {} attempt {}: {}", instance.item_id, a.attempt, e.what());
      if (config.backoff_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(config.backoff_ms) * (1 << std::min(a.attempt, 6)));
      }
    }
    cache.append(a);
    result.transcript.push_back(a);
    if (finish_from(a)) return result;
  }
  result.status = QueryStatus::kExhaustedRetries;
  return result;
}

struct LlmEvaluation {
  EvaluationResult evaluation;
  std::vector<QueryResult> queries;  // same order as the evaluated instances
  int network_calls = 0;
};

// Scores an LLM on one split. Exhausted instances are left out of the means
// and reported through EvalReport::failures / coverage().
inline LlmEvaluation evaluate_llm(LlmClient& client, const LlmClientConfig& config, const PromptTemplate& prompt,
                                  const SenseHierarchy& hierarchy, const Corpus& corpus, Split split,
                                  TranscriptCache& cache, const ScoreOptions& score = {}) {
  config.validate();
  auto instances = corpus.select(split, setting_languages(prompt.setting));
  if (instances.empty()) fail(ErrorKind::kEmptySplit, "nothing to evaluate for this setting and split");

  LlmEvaluation out;
  out.queries.resize(instances.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::optional<Error> first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < instances.size(); i = next++) {
      try {
        out.queries[i] = query_instance(client, config, prompt, *instances[i], cache);
      } catch (const Error& e) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = e;
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::min<int>(config.max_in_flight, static_cast<int>(instances.size())));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) throw *first_error;

  std::map<const RelationInstance*, std::size_t> index;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    index[instances[i]] = i;
    out.network_calls += out.queries[i].network_calls;
  }
  out.evaluation = evaluate_predictor(
      instances,
      [&](const RelationInstance& inst) -> std::optional<LevelOutputs<double>> {
        const auto& q = out.queries[index.at(&inst)];
        if (!q.ok()) return std::nullopt;
        auto senses = connective_to_senses(q.vector, &prompt.connectives, hierarchy);
        return LevelOutputs<double>{senses[0].values, senses[1].values, senses[2].values};
      },
      score);
  out.evaluation.report.split = std::string(to_string(split));
  out.evaluation.report.model_id = config.model;
  return out;
}

}  // namespace harch
