#pragma once

// The hierarchical multi-task classifier and its single-head ablation.
//
//   h   = dropout(shared(x))
//   p1  = softmax(head1(h))
//   a1  = aug1(p1)
//   w_a = alpha * a1 + (1 - alpha) * h
//   p2  = softmax(head2(w_a))
//   a2  = aug2(p2)
//   w_b = beta1 * a1 + beta2 * a2 + (1 - beta1 - beta2) * h
//   p3  = softmax(head3(w_b))
//
// where aug(v) = gelu(project(gelu(expand(v)))) maps a head's distribution
// into the pooled-representation space through a hidden layer of half the
// width. Backward passes are written out by hand and checked against finite
// differences in the tests.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "harch/error.hpp"
#include "harch/nn.hpp"
#include "harch/sense_hierarchy.hpp"

namespace harch {

struct ModelConfig {
  double dropout = 0.1;
  double alpha_init = 0.25;
  double beta1_init = 0.25;
  double beta2_init = 0.25;

  nlohmann::json to_json() const {
    return {{"dropout", dropout}, {"alpha_init", alpha_init}, {"beta1_init", beta1_init}, {"beta2_init", beta2_init}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.dropout = j.value("dropout", c.dropout);
    c.alpha_init = j.value("alpha_init", c.alpha_init);
    c.beta1_init = j.value("beta1_init", c.beta1_init);
    c.beta2_init = j.value("beta2_init", c.beta2_init);
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail(ErrorKind::kConfig, "dropout must be in [0, 1)");
    return c;
  }
};

inline int augmentation_hidden_dim(int dim) { return dim / 2; }

template <typename Scalar>
struct AugmentationBlock {
  Linear<Scalar> expand;   // x -> d/2
  Linear<Scalar> project;  // d/2 -> d

  struct Trace {
    Vec<Scalar> input, expanded, hidden, projected, output;
  };

  static AugmentationBlock init(int in, int dim, Rng& rng) {
    const int hidden = augmentation_hidden_dim(dim);
    if (hidden < 1) fail(ErrorKind::kShapeMismatch, "augmentation block needs dim >= 2");
    AugmentationBlock b;
    b.expand = Linear<Scalar>::init(in, hidden, rng);
    b.project = Linear<Scalar>::init(hidden, dim, rng);
    return b;
  }

  AugmentationBlock zeros_like() const { return {expand.zeros_like(), project.zeros_like()}; }

  int in_dim() const { return expand.in_dim(); }
  int hidden_dim() const { return expand.out_dim(); }
  int out_dim() const { return project.out_dim(); }

  Trace trace(const Vec<Scalar>& v) const {
    Trace t;
    t.input = v;
    t.expanded = expand(v);
    t.hidden = gelu(t.expanded);
    t.projected = project(t.hidden);
    t.output = gelu(t.projected);
    return t;
  }

  Vec<Scalar> operator()(const Vec<Scalar>& v) const { return trace(v).output; }

  Vec<Scalar> backward(const Trace& t, const Vec<Scalar>& d_out, AugmentationBlock& grad) const {
    Vec<Scalar> d_projected = d_out.cwiseProduct(t.projected.unaryExpr([](Scalar x) { return gelu_derivative(x); }));
    Vec<Scalar> d_hidden = project.backward(t.hidden, d_projected, grad.project);
    Vec<Scalar> d_expanded = d_hidden.cwiseProduct(t.expanded.unaryExpr([](Scalar x) { return gelu_derivative(x); }));
    return expand.backward(t.input, d_expanded, grad.expand);
  }

  void append_tensors(const std::string& prefix, std::vector<TensorRef<Scalar>>& out) {
    expand.append_tensors(prefix + ".expand", out);
    project.append_tensors(prefix + ".project", out);
  }
};

// Free-function form: GELU(W2 GELU(W1 v + b1) + b2).
template <typename Scalar>
Vec<Scalar> augmentation_block(const Vec<Scalar>& v, const AugmentationBlock<Scalar>& block) {
  if (v.size() != block.in_dim()) {
    fail(ErrorKind::kShapeMismatch, "augmentation block expects " + std::to_string(block.in_dim()) + " inputs, got " +
                                        std::to_string(v.size()));
  }
  return block(v);
}

template <typename Scalar>
struct HArchParams {
  Linear<Scalar> shared;
  Linear<Scalar> head1, head2, head3;
  AugmentationBlock<Scalar> aug1, aug2;
  Scalar alpha = Scalar(0), beta1 = Scalar(0), beta2 = Scalar(0);

  HArchParams zeros_like() const {
    return {shared.zeros_like(), head1.zeros_like(), head2.zeros_like(), head3.zeros_like(),
            aug1.zeros_like(),   aug2.zeros_like(),  Scalar(0),          Scalar(0),
            Scalar(0)};
  }

  std::vector<TensorRef<Scalar>> tensors() {
    std::vector<TensorRef<Scalar>> out;
    shared.append_tensors("shared", out);
    head1.append_tensors("head1", out);
    head2.append_tensors("head2", out);
    head3.append_tensors("head3", out);
    aug1.append_tensors("aug1", out);
    aug2.append_tensors("aug2", out);
    out.push_back(tensor_ref("alpha", alpha));
    out.push_back(tensor_ref("beta1", beta1));
    out.push_back(tensor_ref("beta2", beta2));
    return out;
  }
};

// Per-level probability vectors; absent levels are empty optionals.
template <typename Scalar>
using LevelOutputs = std::array<std::optional<Vec<Scalar>>, 3>;

template <typename Scalar>
struct HArchOutput {
  Vec<Scalar> p1, p2, p3;

  const Vec<Scalar>& at(int level) const { return level == 1 ? p1 : level == 2 ? p2 : p3; }
};

// Inverted dropout: kept units are scaled by 1/(1-rate).
template <typename Scalar>
Vec<Scalar> sample_dropout_mask(int dim, double rate, Rng& rng) {
  Vec<Scalar> mask(dim);
  if (rate <= 0.0) return Vec<Scalar>::Ones(dim);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Scalar keep = Scalar(1.0 / (1.0 - rate));
  for (int i = 0; i < dim; ++i) mask(i) = u(rng) >= rate ? keep : Scalar(0);
  return mask;
}

template <typename Scalar = double>
class BasicHArchModel {
 public:
  using Params = HArchParams<Scalar>;
  static constexpr std::string_view kKind = "harch";

  struct Trace {
    Vec<Scalar> input, shared_out, mask, h;
    Vec<Scalar> p1;
    typename AugmentationBlock<Scalar>::Trace aug1;
    Vec<Scalar> mixed_alpha, p2;
    typename AugmentationBlock<Scalar>::Trace aug2;
    Vec<Scalar> mixed_beta, p3;
  };

  BasicHArchModel() = default;
  BasicHArchModel(Params params, ModelConfig config) : params_(std::move(params)), config_(config) {}

  // Heads and blocks drawn from the seed; mixing scalars from the config.
  static BasicHArchModel build(int dim, const ModelConfig& config, std::uint64_t seed) {
    if (dim < 2) fail(ErrorKind::kShapeMismatch, "encoder dimension must be at least 2");
    Rng rng(seed);
    Params p;
    p.shared = Linear<Scalar>::init(dim, dim, rng);
    p.head1 = Linear<Scalar>::init(dim, level_size(1), rng);
    p.head2 = Linear<Scalar>::init(dim, level_size(2), rng);
    p.head3 = Linear<Scalar>::init(dim, level_size(3), rng);
    p.aug1 = AugmentationBlock<Scalar>::init(level_size(1), dim, rng);
    p.aug2 = AugmentationBlock<Scalar>::init(level_size(2), dim, rng);
    p.alpha = Scalar(config.alpha_init);
    p.beta1 = Scalar(config.beta1_init);
    p.beta2 = Scalar(config.beta2_init);
    return {std::move(p), config};
  }

  int dim() const { return params_.shared.in_dim(); }
  static bool has_level(int level) { return level >= 1 && level <= 3; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }
  const ModelConfig& config() const { return config_; }
  Params zero_gradients() const { return params_.zeros_like(); }

  // mask == nullptr runs in inference mode (no dropout).
  Trace trace(const Vec<Scalar>& pooled, const Vec<Scalar>* mask = nullptr) const {
    const auto& p = params_;
    Trace t;
    t.input = pooled;
    check_finite(t.input, "encoder");
    t.shared_out = p.shared(pooled);
    if (mask) {
      if (mask->size() != t.shared_out.size()) fail(ErrorKind::kShapeMismatch, "dropout mask size");
      t.mask = *mask;
      t.h = t.shared_out.cwiseProduct(*mask);
    } else {
      t.h = t.shared_out;
    }
    check_finite(t.h, "shared");
    t.p1 = softmax<Scalar>(p.head1(t.h));
    check_finite(t.p1, "head1");
    t.aug1 = p.aug1.trace(t.p1);
    check_finite(t.aug1.output, "aug1");
    t.mixed_alpha = p.alpha * t.aug1.output + (Scalar(1) - p.alpha) * t.h;
    check_finite(t.mixed_alpha, "alpha mix");
    t.p2 = softmax<Scalar>(p.head2(t.mixed_alpha));
    check_finite(t.p2, "head2");
    t.aug2 = p.aug2.trace(t.p2);
    check_finite(t.aug2.output, "aug2");
    t.mixed_beta = p.beta1 * t.aug1.output + p.beta2 * t.aug2.output + (Scalar(1) - p.beta1 - p.beta2) * t.h;
    check_finite(t.mixed_beta, "beta mix");
    t.p3 = softmax<Scalar>(p.head3(t.mixed_beta));
    check_finite(t.p3, "head3");
    return t;
  }

  HArchOutput<Scalar> forward(const Vec<Scalar>& pooled, const Vec<Scalar>* mask = nullptr) const {
    auto t = trace(pooled, mask);
    return {std::move(t.p1), std::move(t.p2), std::move(t.p3)};
  }

  static LevelOutputs<Scalar> outputs(const Trace& t) { return {t.p1, t.p2, t.p3}; }

  LevelOutputs<Scalar> predict(const Vec<Scalar>& pooled) const { return outputs(trace(pooled)); }

  // d_prob[k] is dL/dp_{k+1} (empty when that level carries no loss).
  // Accumulates into grad and returns dL/d(pooled).
  Vec<Scalar> backward(const Trace& t, const std::array<Vec<Scalar>, 3>& d_prob, Params& grad) const {
    const auto& p = params_;
    const int d = dim();
    auto or_zero = [](const Vec<Scalar>& v, int n) { return v.size() ? v : Vec<Scalar>::Zero(n); };

    Vec<Scalar> dh = Vec<Scalar>::Zero(d);
    Vec<Scalar> da1 = Vec<Scalar>::Zero(d);

    // level 3
    Vec<Scalar> dl3 = softmax_backward<Scalar>(t.p3, or_zero(d_prob[2], level_size(3)));
    Vec<Scalar> dmix_b = p.head3.backward(t.mixed_beta, dl3, grad.head3);
    grad.beta1 += dmix_b.dot(t.aug1.output - t.h);
    grad.beta2 += dmix_b.dot(t.aug2.output - t.h);
    da1 += p.beta1 * dmix_b;
    Vec<Scalar> da2 = p.beta2 * dmix_b;
    dh += (Scalar(1) - p.beta1 - p.beta2) * dmix_b;

    // level 2
    Vec<Scalar> dp2 = or_zero(d_prob[1], level_size(2)) + p.aug2.backward(t.aug2, da2, grad.aug2);
    Vec<Scalar> dl2 = softmax_backward<Scalar>(t.p2, dp2);
    Vec<Scalar> dmix_a = p.head2.backward(t.mixed_alpha, dl2, grad.head2);
    grad.alpha += dmix_a.dot(t.aug1.output - t.h);
    da1 += p.alpha * dmix_a;
    dh += (Scalar(1) - p.alpha) * dmix_a;

    // level 1
    Vec<Scalar> dp1 = or_zero(d_prob[0], level_size(1)) + p.aug1.backward(t.aug1, da1, grad.aug1);
    Vec<Scalar> dl1 = softmax_backward<Scalar>(t.p1, dp1);
    dh += p.head1.backward(t.h, dl1, grad.head1);

    Vec<Scalar> d_shared = t.mask.size() ? Vec<Scalar>(dh.cwiseProduct(t.mask)) : dh;
    return p.shared.backward(t.input, d_shared, grad.shared);
  }

 private:
  Params params_;
  ModelConfig config_;
};

template <typename Scalar>
struct IndividualParams {
  Linear<Scalar> shared;
  Linear<Scalar> head;

  IndividualParams zeros_like() const { return {shared.zeros_like(), head.zeros_like()}; }

  std::vector<TensorRef<Scalar>> tensors() {
    std::vector<TensorRef<Scalar>> out;
    shared.append_tensors("shared", out);
    head.append_tensors("head", out);
    return out;
  }
};

// One head for one level, no augmentation blocks and no mixing scalars:
// encoder -> shared linear -> dropout -> head -> softmax.
template <typename Scalar = double>
class BasicIndividualModel {
 public:
  using Params = IndividualParams<Scalar>;
  static constexpr std::string_view kKind = "individual";

  struct Trace {
    Vec<Scalar> input, shared_out, mask, h, p;
  };

  BasicIndividualModel() = default;
  BasicIndividualModel(int level, Params params, ModelConfig config)
      : level_(level), params_(std::move(params)), config_(config) {
    level_size(level_);
  }

  static BasicIndividualModel build(int dim, int level, const ModelConfig& config, std::uint64_t seed) {
    if (dim < 1) fail(ErrorKind::kShapeMismatch, "encoder dimension must be positive");
    Rng rng(seed);
    Params p;
    p.shared = Linear<Scalar>::init(dim, dim, rng);
    p.head = Linear<Scalar>::init(dim, level_size(level), rng);
    return {level, std::move(p), config};
  }

  int dim() const { return params_.shared.in_dim(); }
  int level() const { return level_; }
  bool has_level(int level) const { return level == level_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }
  const ModelConfig& config() const { return config_; }
  Params zero_gradients() const { return params_.zeros_like(); }

  Trace trace(const Vec<Scalar>& pooled, const Vec<Scalar>* mask = nullptr) const {
    Trace t;
    t.input = pooled;
    check_finite(t.input, "encoder");
    t.shared_out = params_.shared(pooled);
    if (mask) {
      if (mask->size() != t.shared_out.size()) fail(ErrorKind::kShapeMismatch, "dropout mask size");
      t.mask = *mask;
      t.h = t.shared_out.cwiseProduct(*mask);
    } else {
      t.h = t.shared_out;
    }
    check_finite(t.h, "shared");
    t.p = softmax<Scalar>(params_.head(t.h));
    check_finite(t.p, "head");
    return t;
  }

  Vec<Scalar> forward(const Vec<Scalar>& pooled, const Vec<Scalar>* mask = nullptr) const {
    return trace(pooled, mask).p;
  }

  LevelOutputs<Scalar> outputs(const Trace& t) const {
    LevelOutputs<Scalar> out;
    out[static_cast<std::size_t>(level_ - 1)] = t.p;
    return out;
  }

  LevelOutputs<Scalar> predict(const Vec<Scalar>& pooled) const { return outputs(trace(pooled)); }

  Vec<Scalar> backward(const Trace& t, const std::array<Vec<Scalar>, 3>& d_prob, Params& grad) const {
    const auto& dp = d_prob[static_cast<std::size_t>(level_ - 1)];
    Vec<Scalar> dl = softmax_backward<Scalar>(t.p, dp.size() ? dp : Vec<Scalar>::Zero(t.p.size()));
    Vec<Scalar> dh = params_.head.backward(t.h, dl, grad.head);
    Vec<Scalar> d_shared = t.mask.size() ? Vec<Scalar>(dh.cwiseProduct(t.mask)) : dh;
    return params_.shared.backward(t.input, d_shared, grad.shared);
  }

 private:
  int level_ = 1;
  Params params_;
  ModelConfig config_;
};

using HArchModel = BasicHArchModel<double>;
using IndividualModel = BasicIndividualModel<double>;

// Copies the trunk and the matching head of an HArch model into an
// individual model for the given level.
template <typename Scalar>
BasicIndividualModel<Scalar> individual_from(const BasicHArchModel<Scalar>& model, int level) {
  const auto& p = model.params();
  const auto& head = level == 1 ? p.head1 : level == 2 ? p.head2 : p.head3;
  return {level, {p.shared, head}, model.config()};
}

}  // namespace harch
