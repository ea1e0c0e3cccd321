#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "harch/evaluation.hpp"
#include "test_support.hpp"

using namespace harch;
using harch::testing::random_simplex;
using harch::testing::source_dir;

namespace {

const SenseHierarchy& H() {
  static const SenseHierarchy h = build_default_hierarchy();
  return h;
}

// Independent oracle: natural-log KL to the midpoint, long double, then / ln 2.
long double oracle_jsd(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  long double kl_p = 0.0L, kl_q = 0.0L;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const long double pi = p(i), qi = q(i), m = (pi + qi) / 2.0L;
    if (pi > 0.0L) kl_p += pi * std::log(pi / m);
    if (qi > 0.0L) kl_q += qi * std::log(qi / m);
  }
  return (kl_p + kl_q) / 2.0L / std::log(2.0L);
}

Eigen::VectorXd sparse_simplex(Rng& rng, int n) {
  Eigen::VectorXd v = random_simplex(rng, n);
  std::bernoulli_distribution zero(0.4);
  for (int i = 0; i < n; ++i) {
    if (zero(rng)) v(i) = 0.0;
  }
  if (v.sum() == 0.0) v(0) = 1.0;
  return v / v.sum();
}

EvalReport report_with_means(double l1, double l2, double l3, std::string split = "test") {
  EvalReport r;
  r.split = std::move(split);
  r.instances = 10;
  r.levels = {LevelSummary{true, l1, 0.0, 10}, LevelSummary{true, l2, 0.0, 10}, LevelSummary{true, l3, 0.0, 10}};
  r.by_language[Language::kEng] = r.levels;
  return r;
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

TEST(JsDistance, MatchesBruteForceOracle) {
  Rng rng(1);
  for (int n : {4, 17, 28}) {
    for (int trial = 0; trial < 1000; ++trial) {
      auto p = sparse_simplex(rng, n);
      auto q = sparse_simplex(rng, n);
      const double expected = std::sqrt(static_cast<double>(oracle_jsd(p, q)));
      EXPECT_NEAR(js_distance(p, q), expected, 1e-9);
      EXPECT_NEAR(js_divergence(p, q), static_cast<double>(oracle_jsd(p, q)), 1e-9);
    }
  }
}

TEST(JsDistance, HalfHalfAgainstOneHot) {
  Eigen::Vector2d p(0.5, 0.5), q(1.0, 0.0);
  // Entropy of the midpoint [0.75, 0.25] minus the mean entropy 0.5.
  const double h_m = -(0.75 * std::log2(0.75) + 0.25 * std::log2(0.25));
  EXPECT_NEAR(js_distance(p, q), std::sqrt(h_m - 0.5), 1e-12);
  EXPECT_NEAR(js_distance(p, q), 0.5579, 5e-5);
}

TEST(JsDistance, MetricProperties) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    auto p = sparse_simplex(rng, 28);
    auto q = sparse_simplex(rng, 28);
    auto r = sparse_simplex(rng, 28);
    const double pq = js_distance(p, q);
    EXPECT_EQ(pq, js_distance(q, p));
    EXPECT_GE(pq, 0.0);
    EXPECT_LE(pq, 1.0);
    EXPECT_EQ(js_distance(p, p), 0.0);
    EXPECT_LE(pq, js_distance(p, r) + js_distance(r, q) + 1e-12);
  }
}

TEST(JsDistance, DisjointSupportsAreAtDistanceOne) {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(17), q = Eigen::VectorXd::Zero(17);
  p.head(8).setConstant(1.0 / 8);
  q.tail(9).setConstant(1.0 / 9);
  EXPECT_NEAR(js_distance(p, q), 1.0, 1e-15);
}

TEST(JsDistance, RejectsBadInputs) {
  Eigen::Vector3d good(0.2, 0.3, 0.5), unnorm(0.2, 0.3, 0.6), neg(-0.1, 0.6, 0.5);
  EXPECT_EQ(kind_of([&] { js_distance(good, unnorm); }), ErrorKind::kUnnormalized);
  EXPECT_EQ(kind_of([&] { js_distance(neg, good); }), ErrorKind::kUnnormalized);
  EXPECT_EQ(kind_of([&] { js_distance(good, Eigen::Vector2d(0.5, 0.5)); }), ErrorKind::kShapeMismatch);
  EXPECT_EQ(kind_of([&] { js_distance(SenseDistribution::uniform(1), SenseDistribution::uniform(2)); }),
            ErrorKind::kLevelMismatch);
}

TEST(Summaries, MeansAreOrderIndependent) {
  Rng rng(3);
  std::vector<InstanceScore> scores;
  for (int i = 0; i < 500; ++i) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    scores.push_back({"i" + std::to_string(i), i % 2 ? Language::kEng : Language::kGer, {u(rng), u(rng), u(rng)}});
  }
  auto a = summarize(scores);
  std::shuffle(scores.begin(), scores.end(), rng);
  auto b = summarize(scores);
  for (int l = 1; l <= 3; ++l) EXPECT_EQ(a.level(l).mean, b.level(l).mean);
  EXPECT_EQ(a.by_language.at(Language::kGer)[0].count, 250u);
}

TEST(Summaries, EvaluatePredictorCountsFailuresSeparately) {
  auto corpus = harch::testing::random_corpus(H(), 20, 4);
  auto instances = corpus.select(std::nullopt);
  int calls = 0;
  auto result = evaluate_predictor(instances, [&](const RelationInstance& inst) -> std::optional<LevelOutputs<double>> {
    if (calls++ % 4 == 0) return std::nullopt;
    LevelOutputs<double> out;
    out[2] = inst.gold_at(3).values;
    return out;
  });
  EXPECT_EQ(result.report.instances, 15u);
  EXPECT_EQ(result.report.failures, 5u);
  EXPECT_DOUBLE_EQ(result.report.coverage(), 0.75);
  EXPECT_FALSE(result.report.level(1).present);
  EXPECT_TRUE(result.report.level(3).present);
  EXPECT_EQ(result.report.level(3).mean, 0.0);
  EXPECT_EQ(kind_of([&] { evaluate_predictor({}, [](const RelationInstance&) { return std::nullopt; }); }),
            ErrorKind::kEmptySplit);
}

TEST(Summaries, UniformPredictorMatchesOracleMean) {
  auto corpus = harch::testing::random_corpus(H(), 30, 5);
  auto instances = corpus.select(std::nullopt);
  auto result = evaluate_predictor(instances, [](const RelationInstance&) -> std::optional<LevelOutputs<double>> {
    return LevelOutputs<double>{SenseDistribution::uniform(1).values, SenseDistribution::uniform(2).values,
                                SenseDistribution::uniform(3).values};
  });
  for (int level = 1; level <= 3; ++level) {
    long double sum = 0.0L;
    for (const auto* inst : instances) {
      sum += std::sqrt(oracle_jsd(SenseDistribution::uniform(level).values, inst->gold_at(level).values));
    }
    EXPECT_NEAR(result.report.level(level).mean, static_cast<double>(sum / instances.size()), 1e-9);
  }
}

TEST(Summaries, Level2ReductionScoresReducedDistributions) {
  auto red = LabelReduction::load(source_dir() / "data/reduction_14.tsv", H());
  auto corpus = harch::testing::random_corpus(H(), 10, 6);
  ScoreOptions opts;
  opts.level2_reduction = &red;
  const auto& gold = corpus.instances[0].gold_at(2);
  Eigen::VectorXd pred = SenseDistribution::uniform(2).values;
  auto score = score_level(gold, pred, opts);
  ASSERT_TRUE(score);
  EXPECT_NEAR(*score, std::sqrt(static_cast<double>(oracle_jsd(red.apply(SenseDistribution(2, pred)), red.apply(gold)))),
              1e-9);
}

TEST(Aggregation, MeanAndSampleStdAcrossSeeds) {
  auto agg = aggregate_runs({report_with_means(0.30, 0.5, 0.6), report_with_means(0.32, 0.5, 0.6),
                             report_with_means(0.34, 0.5, 0.6)});
  EXPECT_NEAR(agg.level(1).mean, 0.32, 1e-12);
  EXPECT_NEAR(agg.level(1).std, 0.02, 1e-12);
  EXPECT_EQ(agg.level(2).std, 0.0);
  EXPECT_EQ(agg.runs, 3u);
  EXPECT_FALSE(agg.single_run);
  EXPECT_EQ(format_cell(agg.level(1)), "0.320 \xC2\xB1 0.020");
  EXPECT_NEAR(agg.by_language.at(Language::kEng)[0].std, 0.02, 1e-12);
  EXPECT_TRUE(aggregate_runs({report_with_means(0.1, 0.2, 0.3)}).single_run);
}

TEST(Aggregation, MismatchedReportsRejected) {
  EXPECT_EQ(kind_of([] { aggregate_runs({report_with_means(0.1, 0.2, 0.3), report_with_means(0.1, 0.2, 0.3, "validation")}); }),
            ErrorKind::kMismatchedReports);
  auto partial = report_with_means(0.1, 0.2, 0.3);
  partial.levels[1].present = false;
  EXPECT_EQ(kind_of([&] { aggregate_runs({report_with_means(0.1, 0.2, 0.3), partial}); }),
            ErrorKind::kMismatchedReports);
  EXPECT_EQ(kind_of([] { aggregate_runs({}); }), ErrorKind::kMismatchedReports);
}

TEST(Reports, JsonRoundTrip) {
  auto r = aggregate_runs({report_with_means(0.30, 0.5, 0.6), report_with_means(0.32, 0.51, 0.61)});
  r.model_id = "HArch";
  r.config_hash = "deadbeef";
  auto back = eval_report_from_json(to_json(r));
  EXPECT_EQ(back.model_id, "HArch");
  EXPECT_EQ(back.split, "test");
  EXPECT_EQ(back.runs, 2u);
  for (int l = 1; l <= 3; ++l) {
    EXPECT_EQ(back.level(l).mean, r.level(l).mean);
    EXPECT_EQ(back.level(l).std, r.level(l).std);
  }
  EXPECT_EQ(back.by_language.at(Language::kEng)[2].mean, r.by_language.at(Language::kEng)[2].mean);
}

TEST(Reports, ResultsTableMarksLowestMeanPerLevel) {
  std::vector<TableRow> rows = {{{"eng", "HArch"}, report_with_means(0.30, 0.50, 0.70)},
                                {{"eng", "GPT-4o"}, report_with_means(0.40, 0.45, 0.71)}};
  rows[1].report.levels[2].present = false;
  auto t = results_table({"Test", "Model"}, rows);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0], (Row{"Test", "Model", "Level-1", "Level-2", "Level-3"}));
  EXPECT_EQ(t[1][2], "0.300 \xC2\xB1 0.000 *");
  EXPECT_EQ(t[2][3], "0.450 \xC2\xB1 0.000 *");
  EXPECT_EQ(t[1][4], "0.700 \xC2\xB1 0.000 *");
  EXPECT_EQ(t[2][4], "-");
}

TEST(Reports, ScoresSerializeWithNullLevels) {
  std::vector<InstanceScore> s = {{"a", Language::kCze, {std::nullopt, 0.25, std::nullopt}}};
  EXPECT_EQ(serialize_scores(s), "{\"item_id\":\"a\",\"language\":\"cze\",\"js1\":null,\"js2\":0.25,\"js3\":null}\n");
}
