#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dermnet/config_json.hpp"
#include "dermnet/error.hpp"
#include "dermnet/manifest.hpp"
#include "dermnet/network.hpp"

namespace dermnet {

// Checkpoint / tensor-archive layout:
//   bytes 0..7   magic "IRNCKPT1"
//   bytes 8..15  little-endian uint64: JSON header length
//   header       UTF-8 JSON (version, config, label map, meta, tensor
//                directory with name/shape/byte-offset/byte-length)
//   payload      raw little-endian float32 tensor data, in directory order

inline constexpr char kCheckpointMagic[8] = {'I', 'R', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  double best_metric = 0.0;
  int best_epoch = 0;
  int trainable_last_n = 0;  // 0 = all layers trainable
  int phase = 1;
};

inline void to_json(json& j, const CheckpointMeta& m) {
  j = json{{"epoch", m.epoch},
           {"best_metric", m.best_metric},
           {"best_epoch", m.best_epoch},
           {"trainable_last_n", m.trainable_last_n},
           {"phase", m.phase}};
}

inline void from_json(const json& j, CheckpointMeta& m) {
  CheckpointMeta d;
  m.epoch = j.value("epoch", d.epoch);
  m.best_metric = j.value("best_metric", d.best_metric);
  m.best_epoch = j.value("best_epoch", d.best_epoch);
  m.trainable_last_n = j.value("trainable_last_n", d.trainable_last_n);
  m.phase = j.value("phase", d.phase);
}

namespace detail {

inline void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void append_tensor_payload(std::string& out, const TensorT<float>& t) {
  static_assert(sizeof(float) == 4);
  const std::size_t bytes = t.data.size() * 4;
  const std::size_t pos = out.size();
  out.resize(pos + bytes);
  std::memcpy(out.data() + pos, t.data.data(), bytes);
}

}  // namespace detail

/// Writes the archive atomically (temp file + rename), so a failed save never
/// clobbers an existing checkpoint.
template <typename T>
void save_checkpoint(const NetworkT<T>& net, const CheckpointMeta& meta,
                     const std::string& path,
                     const std::map<std::string, TensorT<T>>* velocity = nullptr) {
  json tensors = json::array();
  json velocity_dir = json::array();
  std::string payload;
  std::uint64_t offset = 0;

  auto add = [&](json& dir, const std::string& name, const TensorT<T>& t) {
    const TensorT<float> as_float = [&] {
      if constexpr (std::is_same_v<T, float>) return t;
      else return t.template cast<float>();
    }();
    const std::uint64_t length = static_cast<std::uint64_t>(as_float.data.size()) * 4;
    dir.push_back({{"name", name},
                   {"shape", as_float.shape},
                   {"offset", offset},
                   {"length", length}});
    detail::append_tensor_payload(payload, as_float);
    offset += length;
  };

  for (const auto& [name, t] : net.params) add(tensors, name, t);
  if (velocity)
    for (const auto& [name, t] : *velocity) add(velocity_dir, name, t);

  json header{{"version", kCheckpointVersion},
              {"config", net.cfg},
              {"labels", label_map()},
              {"meta", meta},
              {"tensors", tensors}};
  if (velocity) header["velocity"] = velocity_dir;

  std::string blob(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string header_str = header.dump();
  detail::append_u64_le(blob, header_str.size());
  blob += header_str;
  blob += payload;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(Err::IoError, "cannot write checkpoint " + tmp, tmp);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) raise(Err::IoError, "short checkpoint write " + tmp, tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) raise(Err::IoError, "cannot move checkpoint into place: " + ec.message(), path);
}

struct RawCheckpoint {
  json header;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, Tensor> velocity;
};

inline RawCheckpoint read_checkpoint_file(const std::string& path) {
  if (!std::filesystem::exists(path))
    raise(Err::MissingFile, "no such checkpoint: " + path, path);
  std::ifstream in(path, std::ios::binary);
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (blob.size() < 16 ||
      std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    raise(Err::CorruptFile, "bad checkpoint magic in " + path, path);

  const std::uint64_t header_len = detail::read_u64_le(
      reinterpret_cast<const unsigned char*>(blob.data()) + 8);
  if (header_len > blob.size() - 16)
    raise(Err::CorruptFile, "truncated checkpoint header in " + path, path);

  RawCheckpoint raw;
  try {
    raw.header = json::parse(blob.substr(16, header_len));
  } catch (const json::exception& e) {
    raise(Err::CorruptFile, std::string("bad checkpoint header: ") + e.what(), path);
  }
  const int version = raw.header.value("version", -1);
  if (version != kCheckpointVersion)
    raise(Err::VersionMismatch,
          "checkpoint version " + std::to_string(version) + ", expected " +
              std::to_string(kCheckpointVersion), path);

  const std::size_t payload_start = 16 + static_cast<std::size_t>(header_len);
  auto read_dir = [&](const json& dir, std::map<std::string, Tensor>& dst) {
    for (const auto& e : dir) {
      const std::string name = e.at("name").get<std::string>();
      const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
      const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
      const std::uint64_t length = e.at("length").get<std::uint64_t>();
      const std::int64_t expect = Tensor::numel_of(shape) * 4;
      if (static_cast<std::int64_t>(length) != expect)
        raise(Err::CorruptFile, "tensor " + name + " length/shape mismatch", path);
      const std::uint64_t payload_room = blob.size() - payload_start;
      if (offset > payload_room || length > payload_room - offset)
        raise(Err::CorruptFile, "tensor " + name + " extends past end of file", path);
      Tensor t;
      t.shape = shape;
      t.data.resize(static_cast<std::size_t>(length / 4));
      std::memcpy(t.data.data(), blob.data() + payload_start + offset, length);
      dst.emplace(name, std::move(t));
    }
  };
  if (raw.header.contains("tensors")) read_dir(raw.header["tensors"], raw.tensors);
  if (raw.header.contains("velocity")) read_dir(raw.header["velocity"], raw.velocity);
  return raw;
}

struct LoadedCheckpoint {
  Network net;
  CheckpointMeta meta;
  std::map<std::string, int> labels;
  std::map<std::string, Tensor> velocity;
};

/// Rebuilds the graph from the embedded config, fills every parameter, and
/// reapplies the stored freeze mask. Shape of each tensor is validated
/// against the rebuilt graph.
inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_checkpoint_file(path);
  LoadedCheckpoint out;
  if (!raw.header.contains("config"))
    raise(Err::CorruptFile, "checkpoint lacks a config section", path);
  const NetworkConfig cfg = raw.header["config"].get<NetworkConfig>();
  out.net = build_network<float>(cfg);
  out.meta = raw.header.value("meta", CheckpointMeta{});
  out.labels = raw.header.value("labels", std::map<std::string, int>{});
  out.velocity = std::move(raw.velocity);

  for (auto& [name, tensor] : out.net.params) {
    auto it = raw.tensors.find(name);
    if (it == raw.tensors.end())
      raise(Err::CorruptFile, "checkpoint lacks tensor " + name, path);
    if (it->second.shape != tensor.shape)
      raise(Err::ShapeMismatch, "tensor " + name + " has shape " +
                                    it->second.shape_str() + ", graph wants " +
                                    tensor.shape_str(), path);
    tensor = std::move(it->second);
  }
  if (out.meta.trainable_last_n > 0)
    freeze_for_fine_tuning(out.net, out.meta.trainable_last_n);
  return out;
}

struct PartialLoadReport {
  std::vector<std::string> loaded;   // tensors taken from the file
  std::vector<std::string> fresh;    // tensors left at their current values
};

/// Loads matching tensors into an existing graph. With allow_partial unset,
/// any missing or shape-mismatched tensor raises; otherwise mismatches are
/// reported as freshly initialized.
inline PartialLoadReport load_into(Network& net, const std::string& path,
                                   bool allow_partial = false) {
  RawCheckpoint raw = read_checkpoint_file(path);
  PartialLoadReport report;
  for (auto& [name, tensor] : net.params) {
    auto it = raw.tensors.find(name);
    if (it != raw.tensors.end() && it->second.shape == tensor.shape) {
      tensor = std::move(it->second);
      report.loaded.push_back(name);
    } else if (allow_partial) {
      report.fresh.push_back(name);
    } else if (it == raw.tensors.end()) {
      raise(Err::CorruptFile, "checkpoint lacks tensor " + name, path);
    } else {
      raise(Err::ShapeMismatch, "tensor " + name + " has shape " +
                                    it->second.shape_str() + ", graph wants " +
                                    tensor.shape_str(), path);
    }
  }
  return report;
}

}  // namespace dermnet
