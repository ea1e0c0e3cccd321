#pragma once

// Encoder backbones. The model only sees the pooled vector an encoder
// returns for an argument-pair text.
//
//  * HashingEncoder ("stub"): whitespace tokens hashed into a bucket table
//    of embeddings, pooled by first token or mean. Deterministic, cheap, and
//    trainable, so it stands in for a pretrained encoder in tests and in
//    desk-scale runs.
//  * PrecomputedEncoder: pooled vectors exported from a pretrained
//    transformer by tools/export_embeddings.py, looked up by text hash. These
//    are frozen features.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "harch/error.hpp"
#include "harch/hash.hpp"
#include "harch/nn.hpp"
#include "harch/tabular.hpp"

namespace harch {

enum class Pooling { kAuto, kFirst, kMean };

inline Pooling parse_pooling(std::string_view s) {
  if (s == "auto") return Pooling::kAuto;
  if (s == "first") return Pooling::kFirst;
  if (s == "mean") return Pooling::kMean;
  fail(ErrorKind::kConfig, "pooling must be auto, first or mean");
}

inline std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::kAuto: return "auto";
    case Pooling::kFirst: return "first";
    case Pooling::kMean: return "mean";
  }
  return "?";
}

struct EncoderConfig {
  std::string identifier = "stub";
  int dim = 768;           // stub only; precomputed files carry their own
  int max_length = 512;    // tokens
  Pooling pooling = Pooling::kAuto;
  int buckets = 4096;      // stub vocabulary size
  std::string embeddings;  // precomputed feature file

  nlohmann::json to_json() const {
    return {{"identifier", identifier}, {"dim", dim},         {"max_length", max_length},
            {"pooling", to_string(pooling)}, {"buckets", buckets}, {"embeddings", embeddings}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.identifier = j.value("identifier", c.identifier);
    c.dim = j.value("dim", c.dim);
    c.max_length = j.value("max_length", c.max_length);
    c.pooling = parse_pooling(j.value("pooling", std::string("auto")));
    c.buckets = j.value("buckets", c.buckets);
    c.embeddings = j.value("embeddings", std::string());
    return c;
  }
};

class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual const std::string& identifier() const = 0;
  virtual int dim() const = 0;
  // Separator placed between the two arguments of a pair.
  virtual std::string_view pair_boundary() const = 0;
  // item_id is only used for truncation/lookup diagnostics.
  virtual Eigen::VectorXd encode(std::string_view text, std::string_view item_id = {}) const = 0;

  virtual bool trainable() const { return false; }
  // Accumulates dL/d(pooled) for one encoded text into the gradient buffers.
  virtual void backward(std::string_view /*text*/, const Eigen::VectorXd& /*d_pooled*/) {}
  virtual std::vector<TensorRef<double>> parameters() { return {}; }
  virtual std::vector<TensorRef<double>> gradients() { return {}; }
};

// Whitespace tokenization, no normalization of the text.
inline std::vector<std::string_view> whitespace_tokens(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !space(text[j])) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

class HashingEncoder final : public Encoder {
 public:
  static constexpr std::string_view kBoundary = " [SEP] ";
  static constexpr std::string_view kSummaryToken = "[CLS]";

  HashingEncoder(const EncoderConfig& config, std::uint64_t seed)
      : identifier_(config.identifier), dim_(config.dim), buckets_(config.buckets),
        max_length_(config.max_length),
        pooling_(config.pooling == Pooling::kAuto ? Pooling::kMean : config.pooling) {
    if (dim_ < 1) fail(ErrorKind::kConfig, "encoder dim must be positive");
    if (buckets_ < 1) fail(ErrorKind::kConfig, "encoder buckets must be positive");
    if (max_length_ < 2) fail(ErrorKind::kConfig, "encoder max_length must be at least 2");
    Rng rng(seed ^ 0x5bd1e995ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    table_.resize(dim_, buckets_);
    for (Eigen::Index c = 0; c < table_.cols(); ++c) {
      for (Eigen::Index r = 0; r < table_.rows(); ++r) table_(r, c) = normal(rng);
    }
    grad_ = Eigen::MatrixXd::Zero(dim_, buckets_);
  }

  const std::string& identifier() const override { return identifier_; }
  int dim() const override { return dim_; }
  std::string_view pair_boundary() const override { return kBoundary; }
  bool trainable() const override { return true; }

  // Bucket ids of the (truncated) token sequence, summary token first.
  std::vector<int> bucket_ids(std::string_view text, std::string_view item_id = {}) const {
    auto tokens = whitespace_tokens(text);
    std::vector<int> ids;
    ids.reserve(tokens.size() + 1);
    ids.push_back(bucket(kSummaryToken));
    for (auto t : tokens) ids.push_back(bucket(t));
    if (static_cast<int>(ids.size()) > max_length_) {
      spdlog::warn("item {}: {} tokens truncated to {}", item_id.empty() ? "?" : item_id, ids.size(), max_length_);
      ids.resize(static_cast<std::size_t>(max_length_));
    }
    return ids;
  }

  Eigen::VectorXd encode(std::string_view text, std::string_view item_id = {}) const override {
    auto ids = bucket_ids(text, item_id);
    if (pooling_ == Pooling::kFirst) {
      // The summary slot has no context of its own in a bag model; it sees the
      // first real token so different inputs stay distinguishable.
      if (ids.size() < 2) return table_.col(ids[0]);
      return table_.col(ids[0]) + table_.col(ids[1]);
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
    for (int id : ids) sum += table_.col(id);
    return sum / static_cast<double>(ids.size());
  }

  void backward(std::string_view text, const Eigen::VectorXd& d_pooled) override {
    auto ids = bucket_ids(text);
    if (pooling_ == Pooling::kFirst) {
      grad_.col(ids[0]) += d_pooled;
      if (ids.size() >= 2) grad_.col(ids[1]) += d_pooled;
      return;
    }
    const double scale = 1.0 / static_cast<double>(ids.size());
    for (int id : ids) grad_.col(id) += scale * d_pooled;
  }

  std::vector<TensorRef<double>> parameters() override { return {tensor_ref<double>("encoder.table", table_)}; }
  std::vector<TensorRef<double>> gradients() override { return {tensor_ref<double>("encoder.table", grad_)}; }

 private:
  int bucket(std::string_view token) const {
    return static_cast<int>(fnv1a64(token) % static_cast<std::uint64_t>(buckets_));
  }

  std::string identifier_;
  int dim_;
  int buckets_;
  int max_length_;
  Pooling pooling_;
  Eigen::MatrixXd table_;  // dim x buckets
  Eigen::MatrixXd grad_;
};

// Feature file: first line is a JSON header
//   {"identifier": str, "dim": int, "boundary": str, "pooling": str, "max_length": int}
// followed by one {"key": "<fnv1a64 hex of the pair text>", "vector": [dim]}
// per line.
class PrecomputedEncoder final : public Encoder {
 public:
  explicit PrecomputedEncoder(const EncoderConfig& config) {
    if (config.embeddings.empty()) {
      fail(ErrorKind::kUnknownEncoder, "encoder '" + config.identifier +
                                           "' is not built in; set encoder.embeddings to a precomputed feature file");
    }
    auto text = read_file(config.embeddings);
    std::size_t start = 0;
    bool header = true;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      std::string_view line(text.data() + start, end - start);
      start = end + 1;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kMalformedInput, config.embeddings + ": " + e.what());
      }
      if (header) {
        identifier_ = j.at("identifier").get<std::string>();
        dim_ = j.at("dim").get<int>();
        boundary_ = j.at("boundary").get<std::string>();
        header = false;
        if (identifier_ != config.identifier) {
          fail(ErrorKind::kUnknownEncoder, "feature file was produced by '" + identifier_ + "', config asks for '" +
                                               config.identifier + "'");
        }
        continue;
      }
      auto v = j.at("vector").get<std::vector<double>>();
      if (static_cast<int>(v.size()) != dim_) fail(ErrorKind::kShapeMismatch, "feature vector has wrong dimension");
      vectors_.emplace(j.at("key").get<std::string>(), Eigen::Map<Eigen::VectorXd>(v.data(), dim_));
    }
    if (header) fail(ErrorKind::kMalformedInput, config.embeddings + " is empty");
  }

  const std::string& identifier() const override { return identifier_; }
  int dim() const override { return dim_; }
  std::string_view pair_boundary() const override { return boundary_; }

  Eigen::VectorXd encode(std::string_view text, std::string_view item_id = {}) const override {
    auto it = vectors_.find(fnv1a64_hex(text));
    if (it == vectors_.end()) {
      fail(ErrorKind::kMalformedInput,
           "no precomputed features for item " + std::string(item_id.empty() ? "?" : item_id));
    }
    return it->second;
  }

 private:
  std::string identifier_;
  int dim_ = 0;
  std::string boundary_;
  std::unordered_map<std::string, Eigen::VectorXd> vectors_;
};

inline std::unique_ptr<Encoder> make_encoder(const EncoderConfig& config, std::uint64_t seed) {
  if (config.identifier == "stub") return std::make_unique<HashingEncoder>(config, seed);
  return std::make_unique<PrecomputedEncoder>(config);
}

}  // namespace harch
