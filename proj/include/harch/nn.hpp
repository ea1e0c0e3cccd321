#pragma once

// Dense-layer building blocks with hand-written backward passes, and Adam.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "harch/error.hpp"

namespace harch {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Rng = std::mt19937_64;

// Named view over one parameter (or gradient) tensor's storage.
template <typename Scalar>
struct TensorRef {
  std::string name;
  std::span<Scalar> values;
};

template <typename Scalar>
TensorRef<Scalar> tensor_ref(std::string name, Mat<Scalar>& m) {
  return {std::move(name), {m.data(), static_cast<std::size_t>(m.size())}};
}
template <typename Scalar>
TensorRef<Scalar> tensor_ref(std::string name, Vec<Scalar>& v) {
  return {std::move(name), {v.data(), static_cast<std::size_t>(v.size())}};
}
template <typename Scalar>
TensorRef<Scalar> tensor_ref(std::string name, Scalar& s) {
  return {std::move(name), {&s, 1}};
}

// Exact (erf-based) GELU.
template <typename Scalar>
Scalar gelu(Scalar x) {
  using std::erf;
  return Scalar(0.5) * x * (Scalar(1) + erf(x / Scalar(std::numbers::sqrt2)));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  using std::erf;
  using std::exp;
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + erf(x / Scalar(std::numbers::sqrt2)));
  const Scalar pdf = exp(Scalar(-0.5) * x * x) * Scalar(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename Scalar>
Vec<Scalar> gelu(const Vec<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

template <typename Scalar>
Vec<Scalar> softmax(const Vec<Scalar>& logits) {
  Vec<Scalar> e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

// dL/dlogits given p = softmax(logits) and dL/dp.
template <typename Scalar>
Vec<Scalar> softmax_backward(const Vec<Scalar>& p, const Vec<Scalar>& dp) {
  return p.cwiseProduct((dp.array() - p.dot(dp)).matrix());
}

template <typename Scalar>
void check_finite(const Vec<Scalar>& v, const char* layer) {
  if (!v.allFinite()) fail(ErrorKind::kNonFinite, std::string("non-finite values after ") + layer);
}

template <typename Scalar>
struct Linear {
  Mat<Scalar> weight;  // out x in
  Vec<Scalar> bias;    // out

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }

  // U(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
  static Linear init(int in, int out, Rng& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight.resize(out, in);
    l.bias.resize(out);
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = Scalar(bound * dist(rng));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = Scalar(bound * dist(rng));
    return l;
  }

  static Linear zeros(int in, int out) { return {Mat<Scalar>::Zero(out, in), Vec<Scalar>::Zero(out)}; }

  Linear zeros_like() const { return zeros(in_dim(), out_dim()); }

  Vec<Scalar> operator()(const Vec<Scalar>& x) const {
    if (x.size() != weight.cols()) {
      fail(ErrorKind::kShapeMismatch, "linear layer expects " + std::to_string(weight.cols()) + " inputs, got " +
                                          std::to_string(x.size()));
    }
    return weight * x + bias;
  }

  // Accumulates parameter gradients into grad and returns dL/dx.
  Vec<Scalar> backward(const Vec<Scalar>& x, const Vec<Scalar>& dy, Linear& grad) const {
    grad.weight.noalias() += dy * x.transpose();
    grad.bias += dy;
    return weight.transpose() * dy;
  }

  void append_tensors(const std::string& prefix, std::vector<TensorRef<Scalar>>& out) {
    out.push_back(tensor_ref(prefix + ".weight", weight));
    out.push_back(tensor_ref(prefix + ".bias", bias));
  }
};

struct AdamOptions {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Plain Adam with bias correction; no weight decay. Moment buffers follow the
// order of the tensor list, which must be the same on every step.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(const std::vector<TensorRef<Scalar>>& params, const std::vector<TensorRef<Scalar>>& grads) {
    if (params.size() != grads.size()) fail(ErrorKind::kShapeMismatch, "parameter/gradient lists differ");
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.values.size(), Scalar(0));
        second_.emplace_back(p.values.size(), Scalar(0));
      }
    }
    if (first_.size() != params.size()) fail(ErrorKind::kShapeMismatch, "tensor list changed between steps");
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    const Scalar b1 = Scalar(options_.beta1), b2 = Scalar(options_.beta2);
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto value = params[t].values;
      auto grad = grads[t].values;
      auto& m = first_[t];
      auto& v = second_[t];
      if (value.size() != grad.size() || value.size() != m.size()) {
        fail(ErrorKind::kShapeMismatch, "tensor " + params[t].name + " changed shape");
      }
      for (std::size_t i = 0; i < value.size(); ++i) {
        const Scalar g = grad[i];
        m[i] = b1 * m[i] + (Scalar(1) - b1) * g;
        v[i] = b2 * v[i] + (Scalar(1) - b2) * g * g;
        const double m_hat = static_cast<double>(m[i]) / c1;
        const double v_hat = static_cast<double>(v[i]) / c2;
        value[i] -= Scalar(options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon));
      }
    }
  }

  long steps() const { return steps_; }

 private:
  AdamOptions options_;
  std::vector<std::vector<Scalar>> first_;
  std::vector<std::vector<Scalar>> second_;
  long steps_ = 0;
};

template <typename Scalar>
void zero(std::vector<TensorRef<Scalar>>& tensors) {
  for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), Scalar(0));
}

}  // namespace harch
