#pragma once

// Single-file model checkpoints.
//
// Layout: the 8-byte magic "HARCHCKP", a little-endian uint32 format version,
// a little-endian uint64 header length, the JSON header, then every tensor
// listed in the header as raw little-endian float64 in header order. Model
// tensors come first, then any trainable encoder tensors. Values are copied
// bit for bit, so a reloaded model reproduces inference outputs exactly.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "harch/encoder.hpp"
#include "harch/error.hpp"
#include "harch/model.hpp"

namespace harch {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'H', 'A', 'R', 'C', 'H', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string kind;  // "harch" or "individual"
  int level = 0;     // individual models only
  int dim = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  EncoderConfig encoder;
  ModelConfig model;
};

using AnyModel = std::variant<HArchModel, IndividualModel>;

struct LoadedCheckpoint {
  CheckpointMeta meta;
  AnyModel model;
  std::vector<std::pair<std::string, std::vector<double>>> encoder_tensors;

  // Rebuilds the encoder and restores any trained encoder weights.
  std::unique_ptr<Encoder> restore_encoder() const {
    auto enc = make_encoder(meta.encoder, meta.seed);
    auto params = enc->parameters();
    if (params.size() != encoder_tensors.size()) {
      fail(ErrorKind::kBadCheckpoint, "checkpoint encoder tensors do not match the encoder");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, values] = encoder_tensors[i];
      if (name != params[i].name || values.size() != params[i].values.size()) {
        fail(ErrorKind::kBadCheckpoint, "encoder tensor mismatch at " + name);
      }
      std::copy(values.begin(), values.end(), params[i].values.begin());
    }
    return enc;
  }
};

namespace detail {

template <typename Model>
std::vector<TensorRef<double>> model_tensors(Model& model) {
  return model.params().tensors();
}

inline void write_tensors(std::ofstream& out, const std::vector<TensorRef<double>>& tensors) {
  for (const auto& t : tensors) {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
}

inline nlohmann::json describe(const std::vector<TensorRef<double>>& tensors) {
  auto arr = nlohmann::json::array();
  for (const auto& t : tensors) arr.push_back({{"name", t.name}, {"size", t.values.size()}});
  return arr;
}

}  // namespace detail

template <typename Model>
void save_checkpoint(const std::filesystem::path& path, Model& model, Encoder* encoder, const CheckpointMeta& meta) {
  auto tensors = detail::model_tensors(model);
  std::vector<TensorRef<double>> enc_tensors;
  if (encoder && encoder->trainable()) enc_tensors = encoder->parameters();
  nlohmann::json header = {
      {"kind", std::string(Model::kKind)},
      {"level", meta.level},
      {"dim", model.dim()},
      {"scalar", "float64"},
      {"seed", meta.seed},
      {"config_hash", meta.config_hash},
      {"encoder", meta.encoder.to_json()},
      {"model", model.config().to_json()},
      {"tensors", detail::describe(tensors)},
      {"encoder_tensors", detail::describe(enc_tensors)},
  };
  auto text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_tensors(out, tensors);
  detail::write_tensors(out, enc_tensors);
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    fail(ErrorKind::kBadCheckpoint, path.string() + " is not a checkpoint");
  }
  if (version != kCheckpointVersion) fail(ErrorKind::kBadCheckpoint, "unsupported checkpoint version");
  if (length > (1u << 26)) fail(ErrorKind::kBadCheckpoint, "checkpoint header too large");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) fail(ErrorKind::kBadCheckpoint, "truncated checkpoint header");

  LoadedCheckpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ck.meta.kind = header.at("kind").get<std::string>();
    ck.meta.level = header.at("level").get<int>();
    ck.meta.dim = header.at("dim").get<int>();
    ck.meta.seed = header.at("seed").get<std::uint64_t>();
    ck.meta.config_hash = header.at("config_hash").get<std::string>();
    ck.meta.encoder = EncoderConfig::from_json(header.at("encoder"));
    ck.meta.model = ModelConfig::from_json(header.at("model"));
    if (header.at("scalar").get<std::string>() != "float64") fail(ErrorKind::kBadCheckpoint, "unsupported scalar type");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kBadCheckpoint, std::string("bad checkpoint header: ") + e.what());
  }

  auto read_into = [&](std::vector<TensorRef<double>> tensors, const nlohmann::json& listed) {
    if (tensors.size() != listed.size()) fail(ErrorKind::kBadCheckpoint, "tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (listed[i].at("name").get<std::string>() != tensors[i].name ||
          listed[i].at("size").get<std::size_t>() != tensors[i].values.size()) {
        fail(ErrorKind::kBadCheckpoint, "tensor layout mismatch at " + tensors[i].name);
      }
      in.read(reinterpret_cast<char*>(tensors[i].values.data()),
              static_cast<std::streamsize>(tensors[i].values.size() * sizeof(double)));
      if (!in) fail(ErrorKind::kBadCheckpoint, "truncated tensor " + tensors[i].name);
    }
  };

  const int dim = ck.meta.dim;
  if (ck.meta.kind == HArchModel::kKind) {
    auto model = HArchModel::build(dim, ck.meta.model, 0);
    read_into(model.params().tensors(), header.at("tensors"));
    ck.model = std::move(model);
  } else if (ck.meta.kind == IndividualModel::kKind) {
    auto model = IndividualModel::build(dim, ck.meta.level, ck.meta.model, 0);
    read_into(model.params().tensors(), header.at("tensors"));
    ck.model = std::move(model);
  } else {
    fail(ErrorKind::kBadCheckpoint, "unknown model kind " + ck.meta.kind);
  }
  for (const auto& t : header.at("encoder_tensors")) {
    std::vector<double> values(t.at("size").get<std::size_t>());
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) fail(ErrorKind::kBadCheckpoint, "truncated encoder tensor");
    ck.encoder_tensors.emplace_back(t.at("name").get<std::string>(), std::move(values));
  }
  return ck;
}

}  // namespace harch
