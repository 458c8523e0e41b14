#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "emocross/bytes.hpp"
#include "emocross/model.hpp"

namespace emocross::nn {

// Per-channel input normalization statistics, computed on a stage's training
// data and carried in the checkpoint so evaluation uses the same transform.
struct InputStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  static InputStats identity(std::size_t channels) {
    InputStats s;
    s.mean.assign(channels, 0.0);
    s.stddev.assign(channels, 1.0);
    return s;
  }
};

struct CheckpointMeta {
  std::string stage_kind;  // "pretrain" | "finetune" | "joint" | "fresh"
  std::uint32_t stage_index = 0;
  std::string stage_name;
  std::vector<std::string> dataset_ids;
  std::string modality;  // "visual" | "audio" | "none"
  std::uint64_t iterations = 0;
  std::uint64_t seed = 0;
  InputStats input_stats;
};

namespace detail {

using emocross::detail::ByteWriter;
using emocross::detail::crc32;
using CkptReader = emocross::detail::ByteReader<CheckpointCorruptError>;

constexpr char kMagic[8] = {'E', 'M', 'C', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

inline void put_arch(ByteWriter& w, const ArchConfig& a) {
  w.put<std::uint64_t>(a.input_channels);
  w.put<std::uint64_t>(a.input_height);
  w.put<std::uint64_t>(a.input_width);
  for (std::size_t f : a.conv_filters) w.put<std::uint64_t>(f);
  for (std::size_t d : a.fc_dims) w.put<std::uint64_t>(d);
  w.put<std::uint64_t>(a.gn_group_cap);
  w.put<double>(a.gn_eps);
  w.put<double>(a.lrelu_slope);
  w.put<double>(a.dropout_rate);
  w.put<double>(a.margin);
  w.put<std::uint8_t>(a.match_projection ? 1 : 0);
  w.put<std::uint64_t>(a.match_dim);
}

inline ArchConfig get_arch(CkptReader& r) {
  ArchConfig a;
  a.input_channels = r.get<std::uint64_t>();
  a.input_height = r.get<std::uint64_t>();
  a.input_width = r.get<std::uint64_t>();
  for (auto& f : a.conv_filters) f = r.get<std::uint64_t>();
  for (auto& d : a.fc_dims) d = r.get<std::uint64_t>();
  a.gn_group_cap = r.get<std::uint64_t>();
  a.gn_eps = r.get<double>();
  a.lrelu_slope = r.get<double>();
  a.dropout_rate = r.get<double>();
  a.margin = r.get<double>();
  a.match_projection = r.get<std::uint8_t>() != 0;
  a.match_dim = r.get<std::uint64_t>();
  return a;
}

}  // namespace detail

inline std::vector<std::uint8_t> checkpoint_bytes(const ModelParams& params,
                                                  const CheckpointMeta& meta) {
  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), detail::kMagic, detail::kMagic + 8);
  w.put<std::uint32_t>(detail::kVersion);
  detail::put_arch(w, params.arch);

  w.put_str(meta.stage_kind);
  w.put<std::uint32_t>(meta.stage_index);
  w.put_str(meta.stage_name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.dataset_ids.size()));
  for (const auto& id : meta.dataset_ids) w.put_str(id);
  w.put_str(meta.modality);
  w.put<std::uint64_t>(meta.iterations);
  w.put<std::uint64_t>(meta.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.input_stats.mean.size()));
  w.put_doubles(meta.input_stats.mean.data(), meta.input_stats.mean.size());
  w.put_doubles(meta.input_stats.stddev.data(), meta.input_stats.stddev.size());

  w.put<std::uint64_t>(params.tensor_count());
  params.for_each_param([&](ParamGroup, const std::string& name, const Tensor& t) {
    w.put_str(name);
    w.put<std::uint8_t>(0);  // dtype f64
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    w.put_doubles(t.data(), t.size());
  });

  const std::uint32_t crc = detail::crc32(w.bytes.data(), w.bytes.size());
  w.put<std::uint32_t>(crc);
  return w.bytes;
}

// Atomic write: temp file in the same directory, then rename.
inline void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = checkpoint_bytes(params, meta);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot write " + tmp.string());
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("checkpoint: short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointMeta meta;
};

inline LoadedCheckpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw CheckpointCorruptError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), detail::kMagic, 8) != 0) {
    throw CheckpointCorruptError("checkpoint: bad magic bytes");
  }
  const std::uint32_t stored_crc =
      detail::crc32(bytes.data(), bytes.size() - 4);
  std::uint32_t file_crc;
  std::memcpy(&file_crc, bytes.data() + bytes.size() - 4, 4);
  if (stored_crc != file_crc) {
    throw CheckpointCorruptError("checkpoint: checksum mismatch");
  }

  detail::CkptReader r(bytes.data(), bytes.size() - 4);
  for (int i = 0; i < 8; ++i) r.get<std::uint8_t>();  // magic
  const std::uint32_t version = r.get<std::uint32_t>();
  if (version != detail::kVersion) {
    throw CheckpointVersionError("checkpoint: unsupported format version " +
                                 std::to_string(version));
  }
  const ArchConfig arch = detail::get_arch(r);

  LoadedCheckpoint out;
  out.meta.stage_kind = r.get_str();
  out.meta.stage_index = r.get<std::uint32_t>();
  out.meta.stage_name = r.get_str();
  const std::uint32_t nds = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nds; ++i) out.meta.dataset_ids.push_back(r.get_str());
  out.meta.modality = r.get_str();
  out.meta.iterations = r.get<std::uint64_t>();
  out.meta.seed = r.get<std::uint64_t>();
  const std::uint32_t nchan = r.get<std::uint32_t>();
  out.meta.input_stats.mean.resize(nchan);
  out.meta.input_stats.stddev.resize(nchan);
  r.get_doubles(out.meta.input_stats.mean.data(), nchan);
  r.get_doubles(out.meta.input_stats.stddev.data(), nchan);

  // materialize the parameter layout from the arch block, then fill by name
  out.params = build_model(arch, 0);
  std::map<std::string, Tensor*> by_name;
  out.params.for_each_param([&](ParamGroup, const std::string& name, Tensor& t) {
    by_name[name] = &t;
  });

  const std::uint64_t count = r.get<std::uint64_t>();
  if (count != out.params.tensor_count()) {
    throw CheckpointCorruptError("checkpoint: tensor table has " +
                                 std::to_string(count) + " entries, arch needs " +
                                 std::to_string(out.params.tensor_count()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.get_str();
    const std::uint8_t dtype = r.get<std::uint8_t>();
    if (dtype != 0) throw CheckpointCorruptError("checkpoint: unknown dtype tag");
    const std::uint32_t ndim = r.get<std::uint32_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointCorruptError("checkpoint: unexpected tensor '" + name + "'");
    }
    if (it->second->shape() != shape) {
      throw CheckpointCorruptError("checkpoint: tensor '" + name + "' has shape " +
                                   shape_str(shape) + ", arch needs " +
                                   shape_str(it->second->shape()));
    }
    r.get_doubles(it->second->data(), it->second->size());
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

/// Stage-side arch compatibility gate; throws the distinct arch-mismatch kind.
inline void require_same_arch(const ArchConfig& loaded, const ArchConfig& expected,
                              const std::string& context) {
  if (!loaded.same_structure(expected)) {
    throw CheckpointArchError(context + ": checkpoint architecture is incompatible "
                              "with the configured one");
  }
}

}  // namespace emocross::nn
