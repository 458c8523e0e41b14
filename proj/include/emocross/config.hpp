#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "emocross/dataset.hpp"
#include "emocross/model.hpp"
#include "emocross/train.hpp"

namespace emocross::config {

struct SynthDecl {
  std::string name;
  data::SynthSpec spec;
  std::uint64_t seed = 0;
};

struct DatasetDecl {
  std::string name;
  std::string manifest;  // relative to the config file's directory
};

// A parsed pipeline configuration: one arch block, named data declarations,
// and an ordered stage list. Mirrors StageSpec fields verbatim.
struct PipelineConfig {
  nn::ArchConfig arch = nn::desk_arch();
  std::vector<SynthDecl> synths;
  std::vector<DatasetDecl> datasets;
  std::vector<train::StageSpec> stages;
  std::string output_dir;
  std::filesystem::path base_dir;  // directory of the config file
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const unsigned long long u = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a nonnegative integer, got '" +
                      v + "'");
  }
}

inline bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline void set_arch_field(nn::ArchConfig& a, const std::string& key,
                           const std::string& value) {
  if (key == "input_channels") {
    a.input_channels = to_u64(value, key);
  } else if (key == "input_height") {
    a.input_height = to_u64(value, key);
  } else if (key == "input_width") {
    a.input_width = to_u64(value, key);
  } else if (key == "conv_filters") {
    const auto parts = split_list(value);
    if (parts.size() != 4) throw ConfigError("config: conv_filters needs 4 entries");
    for (std::size_t i = 0; i < 4; ++i) a.conv_filters[i] = to_u64(parts[i], key);
  } else if (key == "fc_dims") {
    const auto parts = split_list(value);
    if (parts.size() != 4) throw ConfigError("config: fc_dims needs 4 entries");
    for (std::size_t i = 0; i < 4; ++i) a.fc_dims[i] = to_u64(parts[i], key);
  } else if (key == "gn_groups") {
    a.gn_group_cap = to_u64(value, key);
  } else if (key == "gn_eps") {
    a.gn_eps = to_double(value, key);
  } else if (key == "lrelu_slope") {
    a.lrelu_slope = to_double(value, key);
  } else if (key == "dropout") {
    a.dropout_rate = to_double(value, key);
  } else if (key == "margin") {
    a.margin = to_double(value, key);
  } else if (key == "match_projection") {
    a.match_projection = to_bool(value, key);
  } else if (key == "match_dim") {
    a.match_dim = to_u64(value, key);
  } else {
    throw ConfigError("config: unknown arch field '" + key + "'");
  }
}

inline void set_stage_field(train::StageSpec& s, const std::string& key,
                            const std::string& value) {
  if (key == "kind") {
    s.kind = train::parse_kind(value);
  } else if (key == "datasets") {
    s.datasets = split_list(value);
  } else if (key == "init") {
    s.init = value;
  } else if (key == "freeze") {
    s.freeze = train::parse_freeze(value);
  } else if (key == "lr") {
    s.lr = to_double(value, key);
  } else if (key == "iterations") {
    s.iterations = to_u64(value, key);
  } else if (key == "batch") {
    s.batch = to_u64(value, key);
  } else if (key == "lambda1") {
    s.lambda1 = to_double(value, key);
  } else if (key == "lambda2") {
    s.lambda2 = to_double(value, key);
  } else if (key == "lambda3") {
    s.lambda3 = to_double(value, key);
  } else if (key == "margin") {
    s.margin = to_double(value, key);
  } else if (key == "seed") {
    s.seed = to_u64(value, key);
  } else {
    throw ConfigError("config: unknown stage field '" + key + "'");
  }
}

inline void set_synth_field(SynthDecl& d, const std::string& key,
                            const std::string& value) {
  if (key == "classes") {
    d.spec.classes = to_u64(value, key);
  } else if (key == "per_class") {
    d.spec.per_class = to_u64(value, key);
  } else if (key == "shift") {
    d.spec.shift = to_double(value, key);
  } else if (key == "noise") {
    d.spec.noise = to_double(value, key);
  } else if (key == "seed") {
    d.seed = to_u64(value, key);
  } else if (key == "modality") {
    if (value == "visual") {
      d.spec.modality = data::Modality::kVisual;
    } else if (value == "audio") {
      d.spec.modality = data::Modality::kAudio;
    } else {
      throw ConfigError("config: synth modality must be visual or audio");
    }
  } else if (key == "height") {
    d.spec.height = to_u64(value, key);
  } else if (key == "width") {
    d.spec.width = to_u64(value, key);
  } else {
    throw ConfigError("config: unknown synth field '" + key + "'");
  }
}

}  // namespace detail

inline PipelineConfig parse_config_text(const std::string& text,
                                        const std::filesystem::path& base_dir = {}) {
  PipelineConfig cfg;
  cfg.base_dir = base_dir;

  enum class Block { kTop, kArch, kSynth, kDataset, kStage };
  Block block = Block::kTop;
  SynthDecl synth;
  DatasetDecl dataset;
  train::StageSpec stage;

  std::istringstream is(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    std::string line = detail::trim(raw);
    if (line.empty()) continue;

    try {
      if (line == "}") {
        switch (block) {
          case Block::kTop:
            throw ConfigError("config: unmatched '}'");
          case Block::kSynth:
            cfg.synths.push_back(synth);
            break;
          case Block::kDataset:
            if (dataset.manifest.empty()) {
              throw ConfigError("config: dataset '" + dataset.name +
                                "' needs a manifest");
            }
            cfg.datasets.push_back(dataset);
            break;
          case Block::kStage:
            cfg.stages.push_back(stage);
            break;
          case Block::kArch:
            break;
        }
        block = Block::kTop;
        continue;
      }
      if (line.back() == '{') {
        if (block != Block::kTop) throw ConfigError("config: nested blocks");
        std::istringstream hs(line.substr(0, line.size() - 1));
        std::string kind, label;
        hs >> kind >> label;
        if (kind == "arch") {
          block = Block::kArch;
        } else if (kind == "synth") {
          if (label.empty()) throw ConfigError("config: synth block needs a name");
          synth = SynthDecl{};
          synth.name = label;
          block = Block::kSynth;
        } else if (kind == "dataset") {
          if (label.empty()) throw ConfigError("config: dataset block needs a name");
          dataset = DatasetDecl{};
          dataset.name = label;
          block = Block::kDataset;
        } else if (kind == "stage") {
          stage = train::StageSpec{};
          stage.name = label;
          block = Block::kStage;
        } else {
          throw ConfigError("config: unknown block '" + kind + "'");
        }
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config: expected 'key = value'");
      }
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      switch (block) {
        case Block::kTop:
          if (key == "output_dir") {
            cfg.output_dir = value;
          } else {
            throw ConfigError("config: unknown top-level key '" + key + "'");
          }
          break;
        case Block::kArch:
          detail::set_arch_field(cfg.arch, key, value);
          break;
        case Block::kSynth:
          detail::set_synth_field(synth, key, value);
          break;
        case Block::kDataset:
          if (key == "manifest") {
            dataset.manifest = value;
          } else {
            throw ConfigError("config: unknown dataset field '" + key + "'");
          }
          break;
        case Block::kStage:
          detail::set_stage_field(stage, key, value);
          break;
      }
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(line_no) +
                        ")");
    }
  }
  if (block != Block::kTop) throw ConfigError("config: unterminated block");
  cfg.arch.validate();
  return cfg;
}

inline PipelineConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

// Scalar overrides: "output_dir=...", "arch.<field>=...", "stage<N>.<field>=...".
inline void apply_override(PipelineConfig& cfg, const std::string& expr) {
  const std::size_t eq = expr.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + expr + "' is not key=value");
  }
  const std::string key = detail::trim(expr.substr(0, eq));
  const std::string value = detail::trim(expr.substr(eq + 1));
  if (key == "output_dir") {
    cfg.output_dir = value;
    return;
  }
  const std::size_t dot = key.find('.');
  if (dot == std::string::npos) {
    throw ConfigError("override: unknown key '" + key + "'");
  }
  const std::string scope = key.substr(0, dot);
  const std::string field = key.substr(dot + 1);
  if (scope == "arch") {
    detail::set_arch_field(cfg.arch, field, value);
    cfg.arch.validate();
    return;
  }
  if (scope.rfind("stage", 0) == 0) {
    const std::string idx = scope.substr(5);
    std::size_t n = 0;
    try {
      n = std::stoul(idx);
    } catch (const std::exception&) {
      throw ConfigError("override: bad stage index in '" + key + "'");
    }
    if (n >= cfg.stages.size()) {
      throw ConfigError("override: stage index " + idx + " out of range");
    }
    if (field == "datasets") {
      throw ConfigError("override: only scalar stage fields can be overridden");
    }
    detail::set_stage_field(cfg.stages[n], field, value);
    return;
  }
  throw ConfigError("override: unknown scope '" + scope + "'");
}

}  // namespace emocross::config
