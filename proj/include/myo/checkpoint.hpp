#pragma once

#include "myo/encoder.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace myo {

namespace fs = std::filesystem;

/// A trained model plus the subjects whose windows it has consumed.
struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  std::uint64_t seed = 0;
  std::set<int> subjects_seen;
  std::string stage;
};

// Layout: "MYOCKPT1" | u64 LE header length | JSON header | float32 LE payload.
// The header lists every tensor with its shape and byte offset into the payload.
inline constexpr char kCheckpointMagic[9] = "MYOCKPT1";

inline std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  ck.params.for_each([&](const std::string& name, const Matrix<float>& t) {
    tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", payload.size()}});
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(t.data()[i]);
      for (int b = 0; b < 4; ++b) payload.push_back(static_cast<char>(bits >> (8 * b) & 0xFFU));
    }
  });
  const nlohmann::json header = {{"format", "myo-checkpoint"},
                                 {"version", 1},
                                 {"config", ck.config.to_json()},
                                 {"seed", ck.seed},
                                 {"stage", ck.stage},
                                 {"subjects_seen", ck.subjects_seen},
                                 {"tensors", tensors},
                                 {"payload_bytes", payload.size()}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  const auto len = static_cast<std::uint64_t>(h.size());
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>(len >> (8 * b) & 0xFFU));
  out += h;
  out += payload;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic) != 0)
    throw ConfigError("not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
  if (16 + len > bytes.size()) throw ConfigError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint header: ") + e.what());
  }
  const std::size_t base = 16 + len;
  Checkpoint ck;
  ck.config = ModelConfig::from_json(header.at("config"));
  ck.seed = header.value("seed", std::uint64_t{0});
  ck.stage = header.value("stage", std::string());
  ck.subjects_seen = header.value("subjects_seen", std::set<int>{});
  if (base + header.at("payload_bytes").get<std::size_t>() != bytes.size())
    throw ConfigError("checkpoint payload size mismatch");

  std::map<std::string, nlohmann::json> directory;
  for (const auto& t : header.at("tensors")) directory[t.at("name").get<std::string>()] = t;
  const auto shapes = expected_shapes(ck.config);
  if (directory.size() != shapes.size()) throw ConfigError("checkpoint tensor set does not match its config");

  ck.params.layers.resize(static_cast<std::size_t>(ck.config.n_layers));
  ck.params.for_each_slot([&](const std::string& name, Matrix<float>& t) {
    const auto shape = shapes.find(name);
    if (shape == shapes.end()) return;
    const auto entry = directory.find(name);
    if (entry == directory.end()) throw ConfigError("checkpoint is missing tensor " + name);
    const int rows = entry->second.at("shape")[0], cols = entry->second.at("shape")[1];
    if (rows != shape->second.first || cols != shape->second.second)
      throw ConfigError("checkpoint tensor " + name + " has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", config expects " + std::to_string(shape->second.first) + "x" +
                        std::to_string(shape->second.second));
    const std::size_t off = base + entry->second.at("offset").get<std::size_t>();
    if (off + 4ULL * rows * cols > bytes.size()) throw ConfigError("checkpoint tensor " + name + " out of range");
    t.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 4 * i + b])) << (8 * b);
      t.data()[i] = std::bit_cast<float>(bits);
    }
  });
  check_params(ck.params, ck.config);
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace myo
