#pragma once

// Mean-absolute-error training with Adam over seeded, reshuffled batches, and
// multi-seed experiments.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "harch/checkpoint.hpp"
#include "harch/corpus.hpp"
#include "harch/encoder.hpp"
#include "harch/error.hpp"
#include "harch/evaluation.hpp"
#include "harch/model.hpp"
#include "harch/nn.hpp"

namespace harch {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-5;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::set<Language> languages;  // empty: all
  int level_targets = 0;         // 0: all levels the model predicts
  bool freeze_encoder = false;

  void validate() const {
    if (epochs < 1) fail(ErrorKind::kConfig, "epochs must be at least 1");
    if (batch_size < 1) fail(ErrorKind::kConfig, "batch_size must be at least 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::kConfig, "learning_rate must be positive");
    if (seeds.empty()) fail(ErrorKind::kConfig, "at least one seed is required");
    if (level_targets < 0 || level_targets > 3) fail(ErrorKind::kConfig, "level_targets must be 0 (all), 1, 2 or 3");
  }
};

// (1/n) * sum |pred - gold|
inline double mae_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& gold) {
  if (pred.size() != gold.size() || pred.size() == 0) {
    fail(ErrorKind::kShapeMismatch, "MAE inputs have lengths " + std::to_string(pred.size()) + " and " +
                                        std::to_string(gold.size()));
  }
  return (pred - gold).cwiseAbs().sum() / static_cast<double>(pred.size());
}

inline double mae_loss(const SenseDistribution& pred, const SenseDistribution& gold) {
  if (pred.level != gold.level) fail(ErrorKind::kLevelMismatch, "MAE across levels");
  return mae_loss(pred.values, gold.values);
}

// Subgradient of mae_loss w.r.t. pred (0 where pred == gold).
inline Eigen::VectorXd mae_gradient(const Eigen::VectorXd& pred, const Eigen::VectorXd& gold) {
  Eigen::VectorXd diff = pred - gold;
  return diff.unaryExpr([](double d) { return d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0; }) /
         static_cast<double>(pred.size());
}

inline double total_loss(const HArchOutput<double>& out, const std::array<SenseDistribution, 3>& gold) {
  for (int l = 1; l <= 3; ++l) {
    if (gold[static_cast<std::size_t>(l - 1)].level != l) fail(ErrorKind::kLevelMismatch, "gold levels out of order");
  }
  return mae_loss(out.p1, gold[0].values) + mae_loss(out.p2, gold[1].values) + mae_loss(out.p3, gold[2].values);
}

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;  // mean train loss per epoch
  double initial_loss = 0.0;         // inference-mode train-set loss before/after training
  double final_loss = 0.0;
  std::string checkpoint;
  double seconds = 0.0;
};

struct TrainHooks {
  // Called once per epoch with {"seed", "epoch", "train_loss"}.
  std::function<void(const nlohmann::json&)> on_epoch;
  std::filesystem::path checkpoint;  // empty: none written
  CheckpointMeta meta;
};

namespace detail {

template <typename Model>
std::vector<int> loss_levels(const Model& model, int level_targets) {
  std::vector<int> out;
  for (int l = 1; l <= 3; ++l) {
    if (model.has_level(l) && (level_targets == 0 || level_targets == l)) out.push_back(l);
  }
  if (out.empty()) fail(ErrorKind::kConfig, "level_targets selects a level the model does not predict");
  return out;
}

template <typename Model>
double instance_loss(const Model& model, const typename Model::Trace& t, const RelationInstance& inst,
                     const std::vector<int>& levels, std::array<Eigen::VectorXd, 3>* d_prob, double scale) {
  auto outs = model.outputs(t);
  double loss = 0.0;
  for (int l : levels) {
    const auto idx = static_cast<std::size_t>(l - 1);
    const auto& pred = *outs[idx];
    loss += mae_loss(pred, inst.gold[idx].values);
    if (d_prob) (*d_prob)[idx] = scale * mae_gradient(pred, inst.gold[idx].values);
  }
  return loss;
}

}  // namespace detail

// Mean per-instance summed MAE in inference mode.
template <typename Model>
double dataset_loss(const Model& model, const std::vector<Eigen::VectorXd>& features,
                    const std::vector<const RelationInstance*>& instances, const std::vector<int>& levels) {
  double sum = 0.0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    sum += detail::instance_loss(model, model.trace(features[i]), *instances[i], levels, nullptr, 0.0);
  }
  return sum / static_cast<double>(instances.size());
}

namespace detail {

template <typename Model>
double checked_dataset_loss(const Model& model, const std::vector<Eigen::VectorXd>& features,
                            const std::vector<const RelationInstance*>& instances, const std::vector<int>& levels,
                            const char* when) {
  try {
    return dataset_loss(model, features, instances, levels);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNonFinite) throw;
    fail(ErrorKind::kNonFiniteLoss, std::string(when) + " train-set loss: " + e.what());
  }
}

}  // namespace detail

// Trains in place on the corpus's train split. The seed drives batch order
// and dropout; model initialization is the caller's (build(..., seed)).
template <typename Model>
RunRecord train(Model& model, Encoder& encoder, const Corpus& corpus, const TrainConfig& config, std::uint64_t seed,
                const TrainHooks& hooks = {}) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  auto instances = corpus.select(Split::kTrain, config.languages);
  if (instances.empty()) fail(ErrorKind::kEmptyTrainSplit, "train split is empty after language filtering");
  if (encoder.dim() != model.dim()) fail(ErrorKind::kShapeMismatch, "encoder and model dimensions differ");
  const auto levels = detail::loss_levels(model, config.level_targets);
  const bool tune_encoder = encoder.trainable() && !config.freeze_encoder;

  std::vector<std::string> texts;
  texts.reserve(instances.size());
  for (const auto* inst : instances) texts.push_back(encode_pair(*inst, encoder.pair_boundary()));
  std::vector<Eigen::VectorXd> features;
  auto refresh_features = [&] {
    features.clear();
    for (std::size_t i = 0; i < instances.size(); ++i) features.push_back(encoder.encode(texts[i], instances[i]->item_id));
  };
  refresh_features();

  RunRecord record;
  record.seed = seed;
  record.initial_loss = detail::checked_dataset_loss(model, features, instances, levels, "initial");

  Adam<double> adam({config.learning_rate});
  Rng shuffle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Rng dropout_rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  long batch_id = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch, ++batch_id) {
      const std::size_t end = std::min(order.size(), begin + batch);
      const double scale = 1.0 / static_cast<double>(end - begin);
      auto grads = model.zero_gradients();
      auto enc_grads = encoder.gradients();
      if (tune_encoder) zero(enc_grads);
      double batch_loss = 0.0;
      try {
        for (std::size_t k = begin; k < end; ++k) {
          const std::size_t i = order[k];
          Eigen::VectorXd pooled = tune_encoder ? encoder.encode(texts[i], instances[i]->item_id) : features[i];
          Eigen::VectorXd mask = sample_dropout_mask<double>(model.dim(), model.config().dropout, dropout_rng);
          auto t = model.trace(pooled, &mask);
          std::array<Eigen::VectorXd, 3> d_prob;
          batch_loss += detail::instance_loss(model, t, *instances[i], levels, &d_prob, scale);
          Eigen::VectorXd d_pooled = model.backward(t, d_prob, grads);
          if (tune_encoder) encoder.backward(texts[i], d_pooled);
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNonFinite) throw;
        fail(ErrorKind::kNonFiniteLoss, "batch " + std::to_string(batch_id) + ": " + e.what());
      }
      if (!std::isfinite(batch_loss)) {
        fail(ErrorKind::kNonFiniteLoss, "batch " + std::to_string(batch_id) + " has a non-finite loss");
      }
      epoch_sum += batch_loss;
      auto params = model.params().tensors();
      auto grad_list = grads.tensors();
      if (tune_encoder) {
        auto ep = encoder.parameters();
        params.insert(params.end(), ep.begin(), ep.end());
        grad_list.insert(grad_list.end(), enc_grads.begin(), enc_grads.end());
      }
      adam.step(params, grad_list);
    }
    const double epoch_loss = epoch_sum / static_cast<double>(instances.size());
    record.epoch_losses.push_back(epoch_loss);
    if (hooks.on_epoch) hooks.on_epoch({{"seed", seed}, {"epoch", epoch + 1}, {"train_loss", epoch_loss}});
  }

  if (tune_encoder) refresh_features();
  record.final_loss = detail::checked_dataset_loss(model, features, instances, levels, "final");
  if (!hooks.checkpoint.empty()) {
    save_checkpoint(hooks.checkpoint, model, &encoder, hooks.meta);
    record.checkpoint = hooks.checkpoint.string();
  }
  record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<RunRecord> run;
  std::optional<EvaluationResult> evaluation;
  std::string error;
};

struct ExperimentResult {
  std::vector<SeedOutcome> outcomes;
  EvalReport aggregate;
  bool partial = false;
};

struct ExperimentHooks {
  Split eval_split = Split::kTest;
  std::set<Language> eval_languages;  // empty: same as training
  ScoreOptions score;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  CheckpointMeta meta;                   // seed/kind filled per run
  std::function<void(const nlohmann::json&)> on_epoch;
  std::string model_id;
};

// One train + evaluate per seed. A failing seed is recorded and skipped; the
// aggregate then covers the remaining seeds and is flagged partial.
template <typename Model>
ExperimentResult run_experiment(const Corpus& corpus, const TrainConfig& config,
                                const std::function<Model(std::uint64_t seed, int dim)>& build_model,
                                const std::function<std::unique_ptr<Encoder>(std::uint64_t seed)>& build_encoder,
                                const ExperimentHooks& hooks = {}) {
  config.validate();
  ExperimentResult result;
  std::vector<EvalReport> reports;
  std::optional<ErrorKind> first_failure;
  const auto& eval_langs = hooks.eval_languages.empty() ? config.languages : hooks.eval_languages;
  for (auto seed : config.seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    try {
      auto encoder = build_encoder(seed);
      Model model = build_model(seed, encoder->dim());
      TrainHooks th;
      th.on_epoch = hooks.on_epoch;
      if (!hooks.checkpoint_dir.empty()) {
        th.checkpoint = hooks.checkpoint_dir / ("seed-" + std::to_string(seed) + ".ckpt");
        th.meta = hooks.meta;
        th.meta.seed = seed;
      }
      outcome.run = train(model, *encoder, corpus, config, seed, th);
      auto eval = evaluate(model, *encoder, corpus, hooks.eval_split, eval_langs, hooks.score);
      eval.report.model_id = hooks.model_id;
      eval.report.config_hash = hooks.meta.config_hash;
      reports.push_back(eval.report);
      outcome.evaluation = std::move(eval);
    } catch (const Error& e) {
      spdlog::error("seed {} failed: {}", seed, e.what());
      outcome.error = e.what();
      if (!first_failure) first_failure = e.kind();
      result.partial = true;
    }
    result.outcomes.push_back(std::move(outcome));
  }
  if (reports.empty()) {
    fail(*first_failure, "every seed failed; first error: " + result.outcomes.front().error);
  }
  result.aggregate = aggregate_runs(reports);
  result.aggregate.partial = result.partial;
  return result;
}

}  // namespace harch
