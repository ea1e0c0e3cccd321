#pragma once

// Command-line front end. Every command resolves its configuration before
// touching the output directory, writes resolved_config.json there, and
// finishes with manifest.jsonl listing each artifact with its content hash.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "harch/checkpoint.hpp"
#include "harch/config.hpp"
#include "harch/corpus.hpp"
#include "harch/encoder.hpp"
#include "harch/evaluation.hpp"
#include "harch/llm_http.hpp"
#include "harch/model.hpp"
#include "harch/prompting.hpp"
#include "harch/sense_hierarchy.hpp"
#include "harch/training.hpp"

#ifndef HARCH_SOURCE_DIR
#define HARCH_SOURCE_DIR ""
#endif

namespace harch::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kConfigError = 3, kDataError = 4, kRuntimeError = 5 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kUnknownEncoder:
    case ErrorKind::kMappingUnavailable:
    case ErrorKind::kMissingConnectiveMap:
      return kConfigError;
    case ErrorKind::kHasRealChildren:
    case ErrorKind::kUnknownSenseName:
    case ErrorKind::kNotABijection:
    case ErrorKind::kWrongCount:
    case ErrorKind::kLevelMismatch:
    case ErrorKind::kMissingColumn:
    case ErrorKind::kUnknownLanguage:
    case ErrorKind::kEmptyCorpus:
    case ErrorKind::kAllZero:
    case ErrorKind::kEmptyArgument:
    case ErrorKind::kMalformedInput:
    case ErrorKind::kEmptyTrainSplit:
    case ErrorKind::kBadCheckpoint:
    case ErrorKind::kUnnormalized:
    case ErrorKind::kEmptySplit:
    case ErrorKind::kMismatchedReports:
    case ErrorKind::kInsufficientExamples:
    case ErrorKind::kIo:
      return kDataError;
    default:
      return kRuntimeError;
  }
}

// Relative paths are tried against the working directory first, then the
// source tree, so shipped data resolves from anywhere.
inline fs::path resolve_path(const std::string& p) {
  fs::path path(p);
  if (p.empty() || path.is_absolute() || fs::exists(path)) return path;
  fs::path alt = fs::path(HARCH_SOURCE_DIR) / path;
  if (!std::string(HARCH_SOURCE_DIR).empty() && fs::exists(alt)) return alt;
  return path;
}

class Artifacts {
 public:
  explicit Artifacts(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  const fs::path& root() const { return root_; }

  fs::path write(const std::string& relative, const std::string& content, const std::string& kind) {
    auto path = root_ / relative;
    write_file(path, content);
    record(relative, content, kind);
    return path;
  }

  void add_existing(const fs::path& path, const std::string& kind) {
    auto rel = fs::relative(path, root_).generic_string();
    record(rel, read_file(path), kind);
  }

  void finish() {
    std::string out;
    for (const auto& e : entries_) out += e.dump() + "\n";
    write_file(root_ / "manifest.jsonl", out);
  }

 private:
  void record(const std::string& relative, const std::string& content, const std::string& kind) {
    nlohmann::ordered_json e;
    e["path"] = relative;
    e["kind"] = kind;
    e["hash"] = fnv1a64_hex(content);
    entries_.push_back(std::move(e));
  }

  fs::path root_;
  std::vector<nlohmann::ordered_json> entries_;
};

struct Invocation {
  std::string command;
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string languages;
  std::string split;
  std::string seeds;
  bool freeze_encoder = false;
  int stub_encoder_dim = 0;
  int level = 0;
  std::vector<std::string> checkpoints;
  std::vector<std::string> run_dirs;
};

inline std::vector<std::string> sugar_overrides(const Invocation& inv) {
  std::vector<std::string> out = inv.overrides;
  if (!inv.languages.empty()) out.push_back("data.languages=" + inv.languages);
  if (!inv.split.empty()) out.push_back("eval.split=" + inv.split);
  if (!inv.seeds.empty()) out.push_back("train.seeds=" + inv.seeds);
  if (inv.freeze_encoder) out.push_back("train.freeze_encoder=true");
  if (inv.stub_encoder_dim > 0) {
    out.push_back("encoder.identifier=stub");
    out.push_back("encoder.dim=" + std::to_string(inv.stub_encoder_dim));
  }
  if (inv.level > 0) out.push_back("stats.level=" + std::to_string(inv.level));
  if (!inv.checkpoints.empty()) {
    out.push_back("eval.checkpoints=" + nlohmann::json(inv.checkpoints).dump());
  }
  if (!inv.run_dirs.empty()) out.push_back("report.runs=" + nlohmann::json(inv.run_dirs).dump());
  return out;
}

// ---- shared loading ----

struct Context {
  nlohmann::json config;
  std::string hash;
  SenseHierarchy hierarchy;
  std::optional<LabelReduction> reduction;
};

inline SenseHierarchy load_hierarchy(const nlohmann::json& config) {
  auto p = config.at("data").at("hierarchy").get<std::string>();
  if (p.empty()) return build_default_hierarchy();
  return SenseHierarchy::load(resolve_path(p));
}

inline Corpus load_configured_corpus(const Context& ctx) {
  const auto& d = ctx.config.at("data");
  auto path = d.at("corpus").get<std::string>();
  if (path.empty()) fail(ErrorKind::kConfig, "data.corpus is not set");
  auto resolved = resolve_path(path);
  if (!fs::exists(resolved)) fail(ErrorKind::kIo, "corpus file not found: " + path);
  auto langs = config_languages(d.at("languages"));
  if (resolved.extension() == ".jsonl") return load_instances(resolved, ctx.hierarchy, langs);
  auto mapping = ColumnMapping::load(resolve_path(d.at("columns").get<std::string>()), ctx.hierarchy);
  return load_corpus(resolved, parse_source(d.at("source").get<std::string>()), langs, mapping, ctx.hierarchy);
}

inline ScoreOptions score_options(const Context& ctx) {
  ScoreOptions opts;
  opts.metric = parse_metric(ctx.config.at("eval").at("metric").get<std::string>());
  if (ctx.config.at("eval").at("reduce_level2").get<bool>()) {
    if (!ctx.reduction) fail(ErrorKind::kMappingUnavailable, "eval.reduce_level2 needs data.reduction");
    opts.level2_reduction = &*ctx.reduction;
  }
  return opts;
}

inline std::set<Language> eval_languages(const nlohmann::json& config) {
  auto langs = config_languages(config.at("eval").at("languages"));
  return langs.empty() ? config_languages(config.at("data").at("languages")) : langs;
}

inline std::string languages_label(const std::set<Language>& langs) {
  if (langs.empty() || langs.size() == kAllLanguages.size()) return "All";
  std::string out;
  for (auto l : langs) {
    if (!out.empty()) out += "+";
    auto s = std::string(to_string(l));
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    out += s;
  }
  return out;
}

inline std::string model_label(const EncoderConfig& enc, const std::string& architecture, int level) {
  if (architecture == "individual") return enc.identifier + "-Individual-L" + std::to_string(level);
  return enc.identifier + "-HArch";
}

inline std::string jsonl(const std::vector<nlohmann::ordered_json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

// ---- training pipelines ----

struct ExperimentOutput {
  ExperimentResult result;
  std::vector<nlohmann::ordered_json> epochs;
  double seconds = 0.0;
};

inline ExperimentOutput run_configured_experiment(const Context& ctx, const Corpus& corpus, const EncoderConfig& enc,
                                                  const std::string& architecture, int level, Split eval_split,
                                                  const ScoreOptions& score, const fs::path& checkpoint_dir) {
  auto train_cfg = train_config(ctx.config);
  auto model_cfg = model_config(ctx.config);
  ExperimentOutput out;
  ExperimentHooks hooks;
  hooks.eval_split = eval_split;
  hooks.eval_languages = eval_languages(ctx.config);
  hooks.score = score;
  hooks.checkpoint_dir = checkpoint_dir;
  hooks.meta.encoder = enc;
  hooks.meta.model = model_cfg;
  hooks.meta.config_hash = ctx.hash;
  hooks.meta.level = architecture == "individual" ? level : 0;
  hooks.meta.kind = architecture;
  hooks.model_id = model_label(enc, architecture, level);
  hooks.on_epoch = [&](const nlohmann::json& j) {
    nlohmann::ordered_json r;
    r["model"] = hooks.model_id;
    r["seed"] = j.at("seed");
    r["epoch"] = j.at("epoch");
    r["train_loss"] = j.at("train_loss");
    out.epochs.push_back(std::move(r));
  };
  auto build_encoder = [&](std::uint64_t seed) { return make_encoder(enc, seed); };
  auto start = std::chrono::steady_clock::now();
  if (architecture == "harch") {
    out.result = run_experiment<HArchModel>(
        corpus, train_cfg, [&](std::uint64_t seed, int dim) { return HArchModel::build(dim, model_cfg, seed); },
        build_encoder, hooks);
  } else if (architecture == "individual") {
    if (level < 1 || level > 3) fail(ErrorKind::kConfig, "model.level must be 1, 2 or 3");
    out.result = run_experiment<IndividualModel>(
        corpus, train_cfg,
        [&](std::uint64_t seed, int dim) { return IndividualModel::build(dim, level, model_cfg, seed); },
        build_encoder, hooks);
  } else {
    fail(ErrorKind::kConfig, "model.architecture must be harch or individual");
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.result.aggregate.model_id = hooks.model_id;
  out.result.aggregate.config_hash = ctx.hash;
  return out;
}

inline void write_experiment(Artifacts& art, const std::string& prefix, const ExperimentOutput& exp) {
  std::vector<nlohmann::ordered_json> runs;
  for (const auto& o : exp.result.outcomes) {
    nlohmann::ordered_json r;
    r["seed"] = o.seed;
    if (o.run) {
      r["epoch_losses"] = o.run->epoch_losses;
      r["initial_loss"] = o.run->initial_loss;
      r["final_loss"] = o.run->final_loss;
      r["seconds"] = o.run->seconds;
    }
    if (o.evaluation) r["report"] = to_json(o.evaluation->report);
    if (!o.error.empty()) r["error"] = o.error;
    runs.push_back(std::move(r));
    if (o.evaluation) {
      art.write(prefix + "scores_seed" + std::to_string(o.seed) + ".jsonl", serialize_scores(o.evaluation->scores),
                "scores");
    }
    if (o.run && !o.run->checkpoint.empty()) art.add_existing(o.run->checkpoint, "checkpoint");
  }
  art.write(prefix + "epochs.jsonl", jsonl(exp.epochs), "metrics");
  art.write(prefix + "runs.jsonl", jsonl(runs), "runs");
  art.write(prefix + "eval_report.json", to_json(exp.result.aggregate).dump(2) + "\n", "eval_report");
}

// ---- commands ----

inline void cmd_stats(const Context& ctx, Artifacts& art, bool write_store) {
  auto corpus = load_configured_corpus(ctx);
  const int level = ctx.config.at("stats").at("level").get<int>();
  const int decimals = ctx.config.at("stats").at("decimals").get<int>();
  if (level < 1 || level > 3) fail(ErrorKind::kConfig, "stats.level must be 1, 2 or 3");
  auto stats = corpus_stats(corpus, level, ctx.hierarchy);
  art.write("stats_level" + std::to_string(level) + ".tsv", format_delimited(stats.table(decimals), '\t'), "stats");
  std::map<std::string, std::string> reference;
  if (auto ref = ctx.config.at("data").at("reference_counts").get<std::string>(); !ref.empty()) {
    auto rows = parse_delimited(read_file(resolve_path(ref)), '\t');
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() >= 2) reference[rows[i][0]] = rows[i][1];
    }
  }
  std::vector<Row> counts{{"language", "instances", "train", "validation", "test", "reference"}};
  for (auto lang : stats.languages) {
    const auto name = std::string(to_string(lang));
    Row r{name, std::to_string(corpus.count(lang))};
    for (auto split : {Split::kTrain, Split::kValidation, Split::kTest}) {
      r.push_back(std::to_string(corpus.select(split, {lang}).size()));
    }
    auto it = reference.find(name);
    r.push_back(it == reference.end() ? "-" : it->second);
    if (it != reference.end() && it->second != r[1]) {
      spdlog::info("{}: {} instances loaded, reference count {}", name, r[1], it->second);
    }
    counts.push_back(std::move(r));
  }
  art.write("counts.tsv", format_delimited(counts, '\t'), "stats");
  if (!corpus.repairs.empty()) {
    std::vector<Row> rows{{"item_id", "original_sum"}};
    for (const auto& r : corpus.repairs) rows.push_back({r.item_id, std::to_string(r.original_sum)});
    art.write("repairs.tsv", format_delimited(rows, '\t'), "repairs");
  }
  if (write_store) art.write("instances.jsonl", serialize_instances(corpus), "instance_store");
}

inline void cmd_train(const Context& ctx, Artifacts& art) {
  auto corpus = load_configured_corpus(ctx);
  const auto& m = ctx.config.at("model");
  auto exp = run_configured_experiment(ctx, corpus, encoder_config(ctx.config), m.at("architecture").get<std::string>(),
                                       m.at("level").get<int>(),
                                       parse_split(ctx.config.at("eval").at("split").get<std::string>()),
                                       score_options(ctx), art.root() / "checkpoints");
  write_experiment(art, "", exp);
}

inline void cmd_encoder_select(const Context& ctx, Artifacts& art) {
  auto corpus = load_configured_corpus(ctx);
  const auto& candidates = ctx.config.at("encoder_select").at("candidates");
  if (!candidates.is_array() || candidates.empty()) fail(ErrorKind::kConfig, "encoder_select.candidates is empty");
  std::vector<TableRow> rows;
  const auto test_langs = languages_label(eval_languages(ctx.config));
  const auto train_langs = languages_label(config_languages(ctx.config.at("data").at("languages")));
  for (const auto& cand : candidates) {
    auto enc_json = ctx.config.at("encoder");
    detail::merge_into(enc_json, cand, "encoder_select.candidates[]");
    auto enc = EncoderConfig::from_json(enc_json);
    auto exp = run_configured_experiment(ctx, corpus, enc, "harch", 0, Split::kValidation, score_options(ctx), {});
    write_experiment(art, "candidates/" + enc.identifier + "/", exp);
    rows.push_back({{test_langs, train_langs, exp.result.aggregate.model_id}, exp.result.aggregate});
  }
  art.write("encoder_selection.tsv", format_delimited(results_table({"Test", "Train", "Model"}, rows), '\t'), "table");
}

inline void cmd_ablate(const Context& ctx, Artifacts& art) {
  auto corpus = load_configured_corpus(ctx);
  auto enc = encoder_config(ctx.config);
  auto split = parse_split(ctx.config.at("eval").at("split").get<std::string>());
  std::vector<TableRow> rows;
  std::vector<std::string> times;
  auto add = [&](const std::string& arch, int level, const std::string& dir) {
    auto exp = run_configured_experiment(ctx, corpus, enc, arch, level, split, score_options(ctx), {});
    write_experiment(art, dir + "/", exp);
    rows.push_back({{languages_label(config_languages(ctx.config.at("data").at("languages"))),
                     exp.result.aggregate.model_id},
                    exp.result.aggregate});
    times.push_back(std::to_string(static_cast<long long>(exp.seconds)) + "s");
  };
  for (int level = 1; level <= 3; ++level) add("individual", level, "individual_l" + std::to_string(level));
  add("harch", 0, "harch");
  auto table = results_table({"Language", "Model"}, rows);
  table[0].push_back("Time");
  for (std::size_t i = 0; i < times.size(); ++i) table[i + 1].push_back(times[i]);
  art.write("ablation.tsv", format_delimited(table, '\t'), "table");
}

inline void cmd_evaluate(const Context& ctx, Artifacts& art) {
  auto corpus = load_configured_corpus(ctx);
  auto paths = ctx.config.at("eval").at("checkpoints").get<std::vector<std::string>>();
  if (paths.empty()) fail(ErrorKind::kConfig, "no checkpoints given (eval.checkpoints or --checkpoint)");
  auto split = parse_split(ctx.config.at("eval").at("split").get<std::string>());
  auto langs = eval_languages(ctx.config);
  auto score = score_options(ctx);
  std::vector<EvalReport> reports;
  std::string model_id;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    auto ck = load_checkpoint(resolve_path(paths[i]));
    auto encoder = ck.restore_encoder();
    auto result = std::visit([&](const auto& model) { return evaluate(model, *encoder, corpus, split, langs, score); },
                             ck.model);
    result.report.model_id = model_label(ck.meta.encoder, ck.meta.kind, ck.meta.level);
    result.report.config_hash = ck.meta.config_hash;
    model_id = result.report.model_id;
    art.write("scores_" + std::to_string(i) + ".jsonl", serialize_scores(result.scores), "scores");
    reports.push_back(result.report);
  }
  auto agg = aggregate_runs(reports);
  agg.model_id = model_id;
  agg.config_hash = ctx.hash;
  art.write("eval_report.json", to_json(agg).dump(2) + "\n", "eval_report");
}

// Offline clients for rehearsing the pipeline without an API.
inline std::unique_ptr<LlmClient> make_stub_client(const std::string& kind, const PromptTemplate& prompt,
                                                   const Corpus& corpus) {
  if (kind == "gold") {
    auto gold = std::make_shared<std::map<std::string, std::string>>();
    for (const auto& inst : corpus.instances) {
      auto query = prompt.messages_for(inst).back().content;
      Eigen::VectorXd v = prompt.connectives.to_connective_order(inst.gold_at(3).values);
      (*gold)[query] = nlohmann::json(std::vector<double>(v.data(), v.data() + v.size())).dump();
    }
    return std::make_unique<FunctionClient>([gold](const ChatRequest& r) {
      auto it = gold->find(r.messages.back().content);
      if (it == gold->end()) fail(ErrorKind::kTransportError, "stub has no answer for this query");
      return it->second;
    });
  }
  if (kind == "uniform") {
    auto answer = render_vector(Eigen::VectorXd::Constant(kConnectiveCount, 1.0 / kConnectiveCount));
    return std::make_unique<FunctionClient>([answer](const ChatRequest&) { return answer; });
  }
  if (kind == "malformed") {
    return std::make_unique<FunctionClient>([](const ChatRequest&) { return std::string("I am not sure."); });
  }
  if (kind == "offline") {
    return std::make_unique<FunctionClient>(
        [](const ChatRequest&) -> std::string { fail(ErrorKind::kTransportError, "offline stub"); });
  }
  fail(ErrorKind::kConfig, "llm.stub must be empty, gold, uniform, malformed or offline");
}

inline PromptResources load_prompt_resources(const Context& ctx) {
  PromptResources res;
  res.hierarchy = &ctx.hierarchy;
  const auto& l = ctx.config.at("llm");
  auto conn_dir = resolve_path(l.at("connectives").get<std::string>());
  auto prompt_dir = resolve_path(l.at("prompts").get<std::string>());
  for (auto lang : kAllLanguages) {
    auto name = std::string(to_string(lang));
    if (auto p = conn_dir / (name + ".tsv"); fs::exists(p)) res.connective_maps.emplace(lang, ConnectiveMap::load(p, ctx.hierarchy));
    if (auto p = prompt_dir / (name + ".json"); fs::exists(p)) res.texts.emplace(lang, PromptText::load(p));
  }
  return res;
}

inline void cmd_prompt_eval(const Context& ctx, Artifacts& art) {
  auto corpus = load_configured_corpus(ctx);
  auto client_cfg = llm_client_config(ctx.config);
  auto prompt = build_prompt(prompt_config(ctx.config), load_prompt_resources(ctx), corpus);
  nlohmann::ordered_json pj;
  pj["setting"] = to_string(prompt.setting);
  pj["template_hash"] = prompt.hash();
  pj["system"] = prompt.system_message;
  pj["examples"] = prompt.examples_message();
  pj["acknowledgement"] = prompt.text.acknowledgement;
  pj["few_shot_items"] = nlohmann::json::array();
  for (const auto& ex : prompt.few_shot) {
    pj["few_shot_items"].push_back({{"item_id", ex.item_id}, {"language", to_string(ex.language)}});
  }
  art.write("prompt.json", pj.dump(2) + "\n", "prompt");

  const auto& l = ctx.config.at("llm");
  auto stub = l.at("stub").get<std::string>();
  std::unique_ptr<LlmClient> client = stub.empty() ? std::make_unique<OpenAiCompatibleClient>(client_cfg)
                                                   : make_stub_client(stub, prompt, corpus);
  auto cache_cfg = l.at("cache").get<std::string>();
  const fs::path cache_path = cache_cfg.empty() ? art.root() / "transcripts.jsonl" : resolve_path(cache_cfg);
  TranscriptCache cache(cache_path);
  auto split = parse_split(ctx.config.at("eval").at("split").get<std::string>());
  auto out = evaluate_llm(*client, client_cfg, prompt, ctx.hierarchy, corpus, split, cache, score_options(ctx));
  out.evaluation.report.config_hash = ctx.hash;
  art.write("scores.jsonl", serialize_scores(out.evaluation.scores), "scores");
  art.write("eval_report.json", to_json(out.evaluation.report).dump(2) + "\n", "eval_report");
  nlohmann::ordered_json summary;
  summary["network_calls"] = out.network_calls;
  summary["failures"] = out.evaluation.report.failures;
  summary["coverage"] = out.evaluation.report.coverage();
  summary["means_defined"] = out.evaluation.report.means_defined();
  art.write("llm_summary.json", summary.dump(2) + "\n", "summary");
  if (fs::exists(cache_path) && fs::weakly_canonical(cache_path).string().starts_with(fs::weakly_canonical(art.root()).string())) {
    art.add_existing(cache_path, "transcripts");
  }
  if (!out.evaluation.report.means_defined()) spdlog::warn("no instance produced a valid answer; means are undefined");
}

inline void cmd_report(const Context& ctx, Artifacts& art) {
  auto runs = ctx.config.at("report").at("runs").get<std::vector<std::string>>();
  if (runs.empty()) fail(ErrorKind::kConfig, "no run directories given");
  std::vector<TableRow> rows;
  std::string split;
  for (const auto& dir : runs) {
    auto path = resolve_path(dir);
    if (!fs::exists(path / "manifest.jsonl")) fail(ErrorKind::kIo, dir + " has no manifest.jsonl");
    auto report = eval_report_from_json(nlohmann::json::parse(read_file(path / "eval_report.json")));
    auto cfg = nlohmann::json::parse(read_file(path / "resolved_config.json"));
    if (split.empty()) split = report.split;
    if (report.split != split) {
      fail(ErrorKind::kMismatchedReports, "runs mix splits '" + split + "' and '" + report.split + "'");
    }
    auto train_langs = languages_label(config_languages(cfg.at("data").at("languages")));
    auto test_langs = languages_label(eval_languages(cfg));
    rows.push_back({{test_langs, train_langs, report.model_id}, report});
  }
  art.write("report.tsv", format_delimited(results_table({"Test", "Train", "Model"}, rows), '\t'), "table");
}

// ---- entry point ----

inline void add_common(CLI::App* sub, Invocation& inv) {
  sub->add_option("--config", inv.config_path, "JSON config file");
  sub->add_option("--set", inv.overrides, "override, e.g. train.epochs=3")->take_all();
  sub->add_option("--out", inv.out, "output directory");
  sub->add_option("--languages", inv.languages, "comma-separated: eng,ger,fre,cze or all");
  sub->add_option("--split", inv.split, "evaluation split: train, validation or test");
  sub->add_option("--seeds", inv.seeds, "comma-separated seeds");
  sub->add_flag("--freeze-encoder", inv.freeze_encoder, "keep encoder weights fixed");
  sub->add_option("--stub-encoder-dim", inv.stub_encoder_dim, "use the hashing stub encoder with this width");
}

inline int dispatch(int argc, char** argv) {
  CLI::App app{"harch: hierarchical multi-label implicit discourse relation recognition"};
  app.require_subcommand(1);
  Invocation inv;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"stats", "sense-mass tables per language"},
      {"prepare", "convert a release file into the instance store"},
      {"train", "train and evaluate over the configured seeds"},
      {"encoder-select", "compare encoder candidates on the validation split"},
      {"evaluate", "score saved checkpoints"},
      {"ablate", "HArch against single-level models"},
      {"prompt-eval", "few-shot LLM benchmark"},
      {"report", "merge run reports into one table"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, inv);
    if (name == "stats" || name == "prepare") sub->add_option("--level", inv.level, "sense level 1-3");
    if (name == "evaluate") sub->add_option("--checkpoint", inv.checkpoints, "checkpoint file (repeatable)");
    if (name == "report") sub->add_option("runs", inv.run_dirs, "run directories");
    sub->callback([&inv, name = name] { inv.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  Context ctx;
  try {
    ctx.config = resolve_config(inv.config_path ? std::optional<fs::path>(*inv.config_path) : std::nullopt,
                                sugar_overrides(inv));
    ctx.hash = config_hash(ctx.config);
    ctx.hierarchy = load_hierarchy(ctx.config);
    auto red = ctx.config.at("data").at("reduction").get<std::string>();
    if (!red.empty() && fs::exists(resolve_path(red))) ctx.reduction = LabelReduction::load(resolve_path(red), ctx.hierarchy);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.kind()) == kDataError ? kDataError : kConfigError;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("config: {}", e.what());
    return kConfigError;
  }

  const fs::path out = inv.out.empty() ? fs::path("runs") / (inv.command + "-" + ctx.hash.substr(0, 8)) : fs::path(inv.out);
  try {
    Artifacts art(out);
    art.write("resolved_config.json", ctx.config.dump(2) + "\n", "config");
    if (inv.command == "stats") cmd_stats(ctx, art, false);
    else if (inv.command == "prepare") cmd_stats(ctx, art, true);
    else if (inv.command == "train") cmd_train(ctx, art);
    else if (inv.command == "encoder-select") cmd_encoder_select(ctx, art);
    else if (inv.command == "evaluate") cmd_evaluate(ctx, art);
    else if (inv.command == "ablate") cmd_ablate(ctx, art);
    else if (inv.command == "prompt-eval") cmd_prompt_eval(ctx, art);
    else if (inv.command == "report") cmd_report(ctx, art);
    art.finish();
    spdlog::info("{} finished; artifacts in {}", inv.command, out.string());
    return kOk;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeError;
  }
}

}  // namespace harch::cli
