#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "harch/harch.hpp"
#include "test_support.hpp"

using namespace harch;
using harch::testing::fresh_dir;
using harch::testing::stub_config;

namespace {

const SenseHierarchy& H() {
  static const SenseHierarchy h = build_default_hierarchy();
  return h;
}

TrainConfig overfit_config() {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-2;
  cfg.seeds = {1};
  cfg.freeze_encoder = true;
  return cfg;
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

}  // namespace

TEST(MaeLoss, ReferenceValues) {
  Eigen::Vector4d p(0.25, 0.25, 0.25, 0.25), g(1.0, 0.0, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(mae_loss(p, g), (0.75 + 0.25 * 3) / 4);
  EXPECT_EQ(mae_gradient(p, g), Eigen::Vector4d(-0.25, 0.25, 0.25, 0.25));
  EXPECT_EQ(mae_gradient(g, g), Eigen::Vector4d::Zero());
  EXPECT_THROW(mae_loss(Eigen::VectorXd(Eigen::VectorXd::Zero(3)), g), Error);
}

TEST(MaeLoss, TotalIsSumOverLevels) {
  HArchOutput<double> out{SenseDistribution::uniform(1).values, SenseDistribution::uniform(2).values,
                          SenseDistribution::uniform(3).values};
  std::array<SenseDistribution, 3> gold = {SenseDistribution::one_hot(1, 0), SenseDistribution::one_hot(2, 0),
                                           SenseDistribution::one_hot(3, 0)};
  const double expected = 2.0 * (1.0 - 1.0 / 4) / 4 + 2.0 * (1.0 - 1.0 / 17) / 17 + 2.0 * (1.0 - 1.0 / 28) / 28;
  EXPECT_NEAR(total_loss(out, gold), expected, 1e-15);
}

TEST(Training, OverfitsSmallSyntheticSet) {
  HashingEncoder encoder(stub_config(16), 1);
  auto corpus = harch::testing::teacher_corpus(H(), encoder, 32, 7);
  auto model = HArchModel::build(16, {}, 1);
  auto before = evaluate(model, encoder, corpus, Split::kTrain, {});
  auto record = train(model, encoder, corpus, overfit_config(), 1);
  auto after = evaluate(model, encoder, corpus, Split::kTrain, {});
  ASSERT_EQ(record.epoch_losses.size(), 200u);
  EXPECT_LT(record.final_loss, record.initial_loss);
  EXPECT_LT(record.epoch_losses.back(), record.epoch_losses.front());
  for (int level = 1; level <= 3; ++level) {
    EXPECT_GT(before.report.level(level).mean, 0.2) << "level " << level;
    EXPECT_LT(after.report.level(level).mean, 0.1) << "level " << level;
  }
}

TEST(Training, FrozenEncoderIsUntouchedAndTunedEncoderMoves) {
  auto corpus = harch::testing::random_corpus(H(), 20, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 1e-2;
  cfg.freeze_encoder = true;
  HashingEncoder frozen(stub_config(8, 64), 2);
  const Eigen::VectorXd probe = frozen.encode("w1 w2 w3");
  auto m1 = HArchModel::build(8, {}, 2);
  train(m1, frozen, corpus, cfg, 2);
  EXPECT_EQ(frozen.encode("w1 w2 w3"), probe);

  cfg.freeze_encoder = false;
  HashingEncoder tuned(stub_config(8, 64), 2);
  auto m2 = HArchModel::build(8, {}, 2);
  train(m2, tuned, corpus, cfg, 2);
  EXPECT_NE(tuned.encode("w1 w2 w3"), probe);
}

TEST(Training, IdenticalSeedsGiveIdenticalRuns) {
  auto corpus = harch::testing::random_corpus(H(), 40, 5, {Language::kEng, Language::kGer});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-3;
  cfg.seeds = {1, 2};
  auto run = [&] {
    return run_experiment<HArchModel>(
        corpus, cfg, [](std::uint64_t seed, int dim) { return HArchModel::build(dim, {}, seed); },
        [](std::uint64_t seed) { return std::make_unique<HashingEncoder>(stub_config(12, 128), seed); });
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.outcomes.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.outcomes[i].run->epoch_losses, b.outcomes[i].run->epoch_losses);
    EXPECT_EQ(to_json(a.outcomes[i].evaluation->report).dump(), to_json(b.outcomes[i].evaluation->report).dump());
    EXPECT_EQ(serialize_scores(a.outcomes[i].evaluation->scores), serialize_scores(b.outcomes[i].evaluation->scores));
  }
  EXPECT_EQ(to_json(a.aggregate).dump(), to_json(b.aggregate).dump());
  EXPECT_NE(a.outcomes[0].run->epoch_losses, a.outcomes[1].run->epoch_losses);
  EXPECT_EQ(a.aggregate.runs, 2u);
}

TEST(Training, EpochHookSeesEveryEpoch) {
  auto corpus = harch::testing::random_corpus(H(), 10, 6);
  TrainConfig cfg;
  cfg.epochs = 4;
  std::vector<nlohmann::json> seen;
  TrainHooks hooks;
  hooks.on_epoch = [&](const nlohmann::json& j) { seen.push_back(j); };
  HashingEncoder enc(stub_config(8, 64), 1);
  auto model = HArchModel::build(8, {}, 1);
  auto rec = train(model, enc, corpus, cfg, 9, hooks);
  ASSERT_EQ(seen.size(), 4u);
  EXPECT_EQ(seen[3]["epoch"], 4);
  EXPECT_EQ(seen[3]["seed"], 9);
  EXPECT_EQ(seen[3]["train_loss"].get<double>(), rec.epoch_losses[3]);
}

TEST(Training, IndividualModelTrainsOnlyItsLevel) {
  auto corpus = harch::testing::random_corpus(H(), 20, 7);
  TrainConfig cfg;
  cfg.epochs = 2;
  HashingEncoder enc(stub_config(8, 64), 1);
  auto model = IndividualModel::build(8, 2, {}, 1);
  train(model, enc, corpus, cfg, 1);
  auto eval = evaluate(model, enc, corpus, Split::kTest, {});
  EXPECT_FALSE(eval.report.level(1).present);
  EXPECT_TRUE(eval.report.level(2).present);
  EXPECT_FALSE(eval.report.level(3).present);
  cfg.level_targets = 3;
  EXPECT_EQ(kind_of([&] { train(model, enc, corpus, cfg, 1); }), ErrorKind::kConfig);
}

TEST(Training, ConfigValidation) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kConfig);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kConfig);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kConfig);
  cfg = {};
  cfg.seeds.clear();
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kConfig);
}

TEST(Training, NonFiniteLossAbortsRun) {
  auto corpus = harch::testing::random_corpus(H(), 10, 8);
  HashingEncoder enc(stub_config(8, 64), 1);
  auto model = HArchModel::build(8, {}, 1);
  model.params().head2.weight(0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_EQ(kind_of([&] { train(model, enc, corpus, cfg, 1); }), ErrorKind::kNonFiniteLoss);
}

TEST(Training, EmptyTrainSplit) {
  auto corpus = harch::testing::random_corpus(H(), 10, 9);
  for (auto& inst : corpus.instances) inst.split = Split::kTest;
  HashingEncoder enc(stub_config(8, 64), 1);
  auto model = HArchModel::build(8, {}, 1);
  EXPECT_EQ(kind_of([&] { train(model, enc, corpus, TrainConfig{}, 1); }), ErrorKind::kEmptyTrainSplit);
  auto eng_only = harch::testing::random_corpus(H(), 10, 9);
  TrainConfig cfg;
  cfg.languages = {Language::kFre};
  EXPECT_EQ(kind_of([&] { train(model, enc, eng_only, cfg, 1); }), ErrorKind::kEmptyTrainSplit);
}

TEST(Experiment, FailingSeedMakesAggregatePartial) {
  auto corpus = harch::testing::random_corpus(H(), 20, 10);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seeds = {1, 2, 3};
  auto build = [](std::uint64_t seed, int dim) {
    if (seed == 2) fail(ErrorKind::kNonFiniteLoss, "forced");
    return HArchModel::build(dim, {}, seed);
  };
  auto encoder = [](std::uint64_t seed) { return std::make_unique<HashingEncoder>(stub_config(8, 64), seed); };
  auto result = run_experiment<HArchModel>(corpus, cfg, build, encoder);
  EXPECT_TRUE(result.partial);
  EXPECT_TRUE(result.aggregate.partial);
  EXPECT_EQ(result.aggregate.runs, 2u);
  EXPECT_FALSE(result.outcomes[1].error.empty());

  auto always = [](std::uint64_t, int) -> HArchModel { fail(ErrorKind::kNonFiniteLoss, "forced"); };
  EXPECT_EQ(kind_of([&] { run_experiment<HArchModel>(corpus, cfg, always, encoder); }), ErrorKind::kNonFiniteLoss);
}

TEST(Experiment, CheckpointsReloadToSameScores) {
  auto corpus = harch::testing::random_corpus(H(), 20, 11);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seeds = {4};
  ExperimentHooks hooks;
  hooks.checkpoint_dir = fresh_dir("experiment_ckpt");
  hooks.meta.encoder = stub_config(8, 64);
  auto result = run_experiment<HArchModel>(
      corpus, cfg, [](std::uint64_t seed, int dim) { return HArchModel::build(dim, {}, seed); },
      [](std::uint64_t seed) { return std::make_unique<HashingEncoder>(stub_config(8, 64), seed); }, hooks);
  auto ck = load_checkpoint(result.outcomes[0].run->checkpoint);
  auto enc = ck.restore_encoder();
  auto eval = evaluate(std::get<HArchModel>(ck.model), *enc, corpus, Split::kTest, {});
  EXPECT_EQ(serialize_scores(eval.scores), serialize_scores(result.outcomes[0].evaluation->scores));
}
