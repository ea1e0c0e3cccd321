#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "harch/cli.hpp"
#include "test_support.hpp"

using namespace harch;
using harch::testing::fresh_dir;
using harch::testing::source_dir;
namespace fs = std::filesystem;

namespace {

const SenseHierarchy& H() {
  static const SenseHierarchy h = build_default_hierarchy();
  return h;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "harch");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::dispatch(static_cast<int>(argv.size()), argv.data());
}

fs::path write_json(const fs::path& dir, const std::string& name, const nlohmann::json& j) {
  auto p = dir / name;
  write_file(p, j.dump(2));
  return p;
}

fs::path small_store(const std::string& name) {
  auto dir = fresh_dir(name);
  auto corpus = harch::testing::random_corpus(H(), 24, 17, {Language::kEng, Language::kGer});
  auto p = dir / "instances.jsonl";
  write_file(p, serialize_instances(corpus));
  return p;
}

std::vector<nlohmann::json> manifest(const fs::path& dir) {
  std::vector<nlohmann::json> out;
  for (const auto& line : split_list(read_file(dir / "manifest.jsonl"), '\n')) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace

TEST(Config, DefaultsMatchReferenceHyperparameters) {
  auto c = resolve_config(std::nullopt, {});
  auto t = train_config(c);
  EXPECT_EQ(t.epochs, 10);
  EXPECT_EQ(t.batch_size, 16);
  EXPECT_EQ(t.learning_rate, 1e-5);
  EXPECT_EQ(t.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  auto l = llm_client_config(c);
  EXPECT_EQ(l.model, "gpt-4o");
  EXPECT_EQ(l.temperature, 0.0);
  EXPECT_EQ(l.max_retries, 5);
  EXPECT_EQ(prompt_config(c).example_count, 5);
  EXPECT_EQ(model_config(c).dropout, 0.1);
}

TEST(Config, FileMergesOverDefaults) {
  auto dir = fresh_dir("config_merge");
  auto p = write_json(dir, "c.json",
                      {{"_comment", "ignored"},
                       {"train", {{"epochs", 3}, {"_note", "also ignored"}, {"learning_rate", 2e-5}}},
                       {"data", {{"languages", {"eng", "ger"}}}}});
  auto c = resolve_config(p, {"train.epochs=4"});
  EXPECT_EQ(c["train"]["epochs"], 4);
  EXPECT_EQ(c["train"]["learning_rate"], 2e-5);
  EXPECT_EQ(c["train"]["batch_size"], 16);
  EXPECT_EQ(train_config(c).languages, (std::set<Language>{Language::kEng, Language::kGer}));
  EXPECT_FALSE(c.contains("_comment"));
  EXPECT_FALSE(c["train"].contains("_note"));
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  auto dir = fresh_dir("config_reject");
  EXPECT_EQ(kind_of([&] { resolve_config(write_json(dir, "a.json", {{"trian", {{"epochs", 1}}}}), {}); }),
            ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { resolve_config(write_json(dir, "b.json", {{"train", {{"epoch", 1}}}}), {}); }),
            ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { resolve_config(write_json(dir, "c.json", {{"train", {{"epochs", "ten"}}}}), {}); }),
            ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { resolve_config(write_json(dir, "d.json", {{"train", {{"epochs", 2.5}}}}), {}); }),
            ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { resolve_config(write_json(dir, "e.json", {{"train", 3}}), {}); }), ErrorKind::kConfig);
  write_file(dir / "f.json", "{ not json");
  EXPECT_EQ(kind_of([&] { resolve_config(dir / "f.json", {}); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { resolve_config(dir / "missing.json", {}); }), ErrorKind::kConfig);
}

TEST(Config, OverridesCoerceToDefaultTypes) {
  auto c = default_config();
  apply_override(c, "train.epochs=7");
  apply_override(c, "train.learning_rate=3e-4");
  apply_override(c, "train.freeze_encoder=true");
  apply_override(c, "train.seeds=4,5");
  apply_override(c, "data.languages=[\"fre\"]");
  apply_override(c, "llm.model=gpt-4o-mini");
  EXPECT_EQ(c["train"]["epochs"], 7);
  EXPECT_TRUE(c["train"]["epochs"].is_number_integer());
  EXPECT_EQ(c["train"]["learning_rate"], 3e-4);
  EXPECT_EQ(c["train"]["freeze_encoder"], true);
  EXPECT_EQ(c["train"]["seeds"], nlohmann::json({4, 5}));
  EXPECT_EQ(c["data"]["languages"], nlohmann::json({"fre"}));
  EXPECT_EQ(c["llm"]["model"], "gpt-4o-mini");

  EXPECT_EQ(kind_of([&] { apply_override(c, "train.epochs=many"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { apply_override(c, "train.freeze_encoder=maybe"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { apply_override(c, "train.nope=1"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { apply_override(c, "train=1"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { apply_override(c, "epochs"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { apply_override(c, "train.seeds=[\"a\"]"); }), ErrorKind::kConfig);
}

TEST(Config, TypedViewsValidate) {
  auto c = resolve_config(std::nullopt, {"llm.temperature=0.5"});
  EXPECT_EQ(kind_of([&] { llm_client_config(c); }), ErrorKind::kConfig);
  c = resolve_config(std::nullopt, {"llm.max_retries=9"});
  EXPECT_EQ(kind_of([&] { llm_client_config(c); }), ErrorKind::kConfig);
  c = resolve_config(std::nullopt, {"data.languages=klingon"});
  EXPECT_EQ(kind_of([&] { train_config(c); }), ErrorKind::kUnknownLanguage);
  EXPECT_EQ(kind_of([] { parse_metric("kl"); }), ErrorKind::kConfig);
}

TEST(Config, HashIsStableAndSensitive) {
  auto a = resolve_config(std::nullopt, {});
  auto b = resolve_config(std::nullopt, {});
  EXPECT_EQ(config_hash(a), config_hash(b));
  apply_override(b, "train.epochs=11");
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ShippedPresetsResolve) {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(source_dir() / "configs")) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    SCOPED_TRACE(entry.path().filename().string());
    auto c = resolve_config(entry.path(), {});
    EXPECT_NO_THROW(train_config(c));
    EXPECT_NO_THROW(llm_client_config(c));
    EXPECT_NO_THROW(prompt_config(c));
    EXPECT_NO_THROW(encoder_config(c));
  }
  EXPECT_GT(seen, 0);
}

TEST(Cli, ExitCodeMapping) {
  EXPECT_EQ(cli::exit_code_for(ErrorKind::kConfig), 3);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::kMissingConnectiveMap), 3);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::kEmptyCorpus), 4);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::kBadCheckpoint), 4);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::kNonFiniteLoss), 5);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::kTransportError), 5);
}

TEST(Cli, UsageAndConfigErrors) {
  auto out = fresh_dir("cli_errors");
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"train", "--no-such-flag"}), 2);
  EXPECT_EQ(run_cli({"train", "--config", (out / "missing.json").string(), "--out", (out / "a").string()}), 3);
  EXPECT_FALSE(fs::exists(out / "a"));
  EXPECT_EQ(run_cli({"train", "--set", "train.nope=1", "--out", (out / "b").string()}), 3);
  EXPECT_EQ(run_cli({"train", "--out", (out / "c").string()}), 3);  // data.corpus unset
  EXPECT_EQ(run_cli({"stats", "--set", "data.corpus=" + (out / "absent.csv").string(), "--out", (out / "d").string()}),
            4);
}

TEST(Cli, StatsWritesManifestWithContentHashes) {
  auto store = small_store("cli_stats_store");
  auto out = fresh_dir("cli_stats") / "run";
  ASSERT_EQ(run_cli({"stats", "--set", "data.corpus=" + store.string(), "--level", "2", "--out", out.string()}), 0);
  auto entries = manifest(out);
  ASSERT_GE(entries.size(), 3u);
  EXPECT_EQ(entries[0]["path"], "resolved_config.json");
  for (const auto& e : entries) {
    EXPECT_EQ(e["hash"], fnv1a64_hex(read_file(out / e["path"].get<std::string>()))) << e["path"];
  }
  auto counts = parse_delimited(read_file(out / "counts.tsv"), '\t');
  ASSERT_EQ(counts.size(), 3u);
  EXPECT_EQ(counts[1][0], "eng");
  EXPECT_EQ(counts[1][1], "24");
  auto table = parse_delimited(read_file(out / "stats_level2.tsv"), '\t');
  ASSERT_EQ(table.size(), 1u + 17u + 1u);
  EXPECT_EQ(table.back()[0], "Total");
  EXPECT_EQ(table.back().back(), "48.0");
}

TEST(Cli, TrainThenEvaluateCheckpointReproducesScores) {
  auto store = small_store("cli_train_store");
  auto root = fresh_dir("cli_train");
  const std::vector<std::string> common = {"--set",   "data.corpus=" + store.string(), "train.epochs=2",
                                           "train.learning_rate=1e-3", "--stub-encoder-dim", "8", "--seeds", "5"};
  auto args = common;
  args.insert(args.begin(), "train");
  args.insert(args.end(), {"--out", (root / "train").string()});
  ASSERT_EQ(run_cli(args), 0);
  auto runs = split_list(read_file(root / "train/runs.jsonl"), '\n');
  auto run = nlohmann::json::parse(runs[0]);
  EXPECT_EQ(run["seed"], 5);
  EXPECT_EQ(run["epoch_losses"].size(), 2u);
  auto ckpt = root / "train/checkpoints";
  ASSERT_TRUE(fs::exists(ckpt));
  fs::path file;
  for (const auto& e : fs::directory_iterator(ckpt)) file = e.path();

  args = common;
  args.insert(args.begin(), "evaluate");
  args.insert(args.end(), {"--checkpoint", file.string(), "--out", (root / "eval").string()});
  ASSERT_EQ(run_cli(args), 0);
  EXPECT_EQ(read_file(root / "eval/scores_0.jsonl"), read_file(root / "train/scores_seed5.jsonl"));

  ASSERT_EQ(run_cli({"report", (root / "train").string(), (root / "eval").string(), "--out", (root / "report").string()}),
            0);
  auto table = parse_delimited(read_file(root / "report/report.tsv"), '\t');
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[1][2], "stub-HArch");
  EXPECT_EQ(table[1][3].substr(0, 5), table[2][3].substr(0, 5));
}

TEST(Cli, PromptEvalReplaysFromTranscripts) {
  auto store = small_store("cli_prompt_store");
  auto root = fresh_dir("cli_prompt");
  auto cache = root / "cache.jsonl";
  const std::vector<std::string> base = {"prompt-eval", "--set", "data.corpus=" + store.string(),
                                         "data.languages=eng", "llm.backoff_ms=0", "llm.cache=" + cache.string()};
  auto live = base;
  live.insert(live.end(), {"llm.stub=gold", "--out", (root / "live").string()});
  ASSERT_EQ(run_cli(live), 0);
  auto summary = nlohmann::json::parse(read_file(root / "live/llm_summary.json"));
  EXPECT_EQ(summary["coverage"], 1.0);
  EXPECT_GT(summary["network_calls"].get<int>(), 0);

  auto replay = base;
  replay.insert(replay.end(), {"llm.stub=offline", "--out", (root / "replay").string()});
  ASSERT_EQ(run_cli(replay), 0);
  auto again = nlohmann::json::parse(read_file(root / "replay/llm_summary.json"));
  EXPECT_EQ(again["network_calls"], 0);
  EXPECT_EQ(read_file(root / "replay/scores.jsonl"), read_file(root / "live/scores.jsonl"));
  auto a = nlohmann::json::parse(read_file(root / "live/eval_report.json"));
  auto b = nlohmann::json::parse(read_file(root / "replay/eval_report.json"));
  a.erase("config_hash");
  b.erase("config_hash");
  EXPECT_EQ(a, b);

  auto bad_stub = base;
  bad_stub.insert(bad_stub.end(), {"llm.stub=psychic", "--out", (root / "bad").string()});
  EXPECT_EQ(run_cli(bad_stub), 3);
  auto ger = base;
  ger.insert(ger.end(), {"llm.setting=ger", "data.languages=ger", "llm.stub=gold", "--out", (root / "ger").string()});
  EXPECT_EQ(run_cli(ger), 3);
}
