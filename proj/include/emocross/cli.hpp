#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "emocross/config.hpp"
#include "emocross/gradsuite.hpp"
#include "emocross/metrics.hpp"

namespace emocross::cli {

struct Invocation {
  std::string command;  // pretrain|finetune|joint-train|pipeline|features|synth|eval|gradcheck
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::vector<std::string> inputs;       // wav files (features)
  std::string manifest;                  // features: manifest alternative
  std::vector<std::string> checkpoints;  // eval
  std::vector<std::string> eval_datasets;
  std::string head = "role";  // eval: "1", "2", "both", "role"
  std::size_t gradcheck_seeds = 20;
  std::string stage_sel;  // single-stage commands: stage name or index
};

// Exit codes: 0 success, 1 usage/config, 2 data, 3 numerical abort.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

// Materializes named datasets on demand: synth declarations expand to
// "<name>.a" / "<name>.b"; plain names load their declared manifests; other
// refs are treated as manifest paths.
class DatasetStore {
 public:
  DatasetStore(const config::PipelineConfig& cfg) : cfg_(cfg) {}

  const data::Dataset& resolve(const std::string& ref) {
    auto it = cache_.find(ref);
    if (it != cache_.end()) return it->second;

    for (const config::SynthDecl& s : cfg_.synths) {
      if (ref == s.name + ".a" || ref == s.name + ".b") {
        auto [a, b] = data::synth_generate(s.spec, s.seed);
        a.id = s.name + ".a";
        b.id = s.name + ".b";
        cache_.emplace(a.id, std::move(a));
        cache_.emplace(b.id, std::move(b));
        return cache_.at(ref);
      }
    }
    for (const config::DatasetDecl& d : cfg_.datasets) {
      if (ref == d.name) {
        data::Dataset ds = data::load_manifest(cfg_.base_dir / d.manifest);
        ds.id = d.name;
        return cache_.emplace(ref, std::move(ds)).first->second;
      }
    }
    if (std::filesystem::exists(ref)) {
      data::Dataset ds = data::load_manifest(ref);
      return cache_.emplace(ref, std::move(ds)).first->second;
    }
    throw DataError("dataset '" + ref + "' is neither declared nor a manifest path");
  }

 private:
  const config::PipelineConfig& cfg_;
  std::map<std::string, data::Dataset> cache_;
};

inline std::filesystem::path resolve_out_dir(const Invocation& inv,
                                             const config::PipelineConfig& cfg) {
  if (!inv.out_dir.empty()) return inv.out_dir;
  if (!cfg.output_dir.empty()) return cfg.base_dir / cfg.output_dir;
  if (const char* env = std::getenv("EMOCROSS_OUTPUT_ROOT")) {
    return std::filesystem::path(env) / inv.command;
  }
  return std::filesystem::path("emocross_out") / inv.command;
}

inline config::PipelineConfig load_config(const Invocation& inv) {
  config::PipelineConfig cfg;
  if (!inv.config_path.empty()) {
    cfg = config::parse_config_file(inv.config_path);
  }
  for (const std::string& ov : inv.overrides) config::apply_override(cfg, ov);
  return cfg;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw DataError("cannot write " + p.string());
  os << text;
}

inline int run_single_stage(const Invocation& inv, train::StageKind kind) {
  config::PipelineConfig cfg = load_config(inv);
  if (cfg.stages.empty()) throw ConfigError("config declares no stages");

  std::size_t index = cfg.stages.size();
  if (!inv.stage_sel.empty()) {
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
      if (cfg.stages[i].name == inv.stage_sel ||
          std::to_string(i) == inv.stage_sel) {
        index = i;
        break;
      }
    }
    if (index == cfg.stages.size()) {
      throw ConfigError("no stage named '" + inv.stage_sel + "'");
    }
  } else {
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
      if (cfg.stages[i].kind == kind) {
        index = i;
        break;
      }
    }
    if (index == cfg.stages.size()) {
      throw ConfigError("config has no " + train::kind_name(kind) + " stage");
    }
  }
  const train::StageSpec& spec = cfg.stages[index];
  if (spec.kind != kind) {
    throw ConfigError("stage " + std::to_string(index) + " is a " +
                      train::kind_name(spec.kind) + " stage, not " +
                      train::kind_name(kind));
  }
  spec.validate();
  if (spec.init != "fresh" && (spec.init == "prev" || spec.init.rfind("stage", 0) == 0)) {
    throw ConfigError("single-stage runs need init=fresh or a checkpoint path");
  }

  DatasetStore store(cfg);
  const std::filesystem::path out = resolve_out_dir(inv, cfg);
  std::filesystem::create_directories(out);

  train::StageResult res;
  switch (kind) {
    case train::StageKind::kPretrain:
      res = train::run_pretrain(cfg.arch, spec, store.resolve(spec.datasets[0]));
      break;
    case train::StageKind::kFinetune: {
      nn::LoadedCheckpoint lc = nn::load_checkpoint(spec.init);
      nn::require_same_arch(lc.params.arch, cfg.arch, "init");
      res = train::run_finetune(cfg.arch, spec, store.resolve(spec.datasets[0]),
                                lc.params);
      break;
    }
    case train::StageKind::kJoint: {
      nn::LoadedCheckpoint lc = nn::load_checkpoint(spec.init);
      nn::require_same_arch(lc.params.arch, cfg.arch, "init");
      res = train::run_joint(cfg.arch, spec, store.resolve(spec.datasets[0]),
                             store.resolve(spec.datasets[1]), lc.params);
      break;
    }
  }
  res.meta.stage_index = static_cast<std::uint32_t>(index);
  const std::string stem =
      "stage" + std::to_string(index) + "_" +
      (spec.name.empty() ? train::kind_name(spec.kind) : spec.name);
  nn::save_checkpoint(res.params, res.meta, out / (stem + ".ckpt"));
  res.log.write_csv(out / (stem + "_log.csv"));
  std::printf("stage %zu (%s): %zu iterations, final loss %.6f\n", index,
              train::kind_name(spec.kind).c_str(), res.log.rows.size(),
              res.log.rows.back().l_joint);
  std::printf("checkpoint: %s\n", (out / (stem + ".ckpt")).c_str());
  return kExitOk;
}

inline int run_pipeline_cmd(const Invocation& inv) {
  config::PipelineConfig cfg = load_config(inv);
  if (cfg.stages.empty()) throw ConfigError("config declares no stages");
  DatasetStore store(cfg);
  const std::filesystem::path out = resolve_out_dir(inv, cfg);

  auto results = train::run_pipeline(
      cfg.arch, cfg.stages,
      [&](const std::string& ref) -> const data::Dataset& { return store.resolve(ref); },
      out);
  for (std::size_t k = 0; k < results.size(); ++k) {
    std::printf("stage %zu (%s): final loss %.6f\n", k,
                results[k].meta.stage_kind.c_str(),
                results[k].log.rows.back().l_joint);
  }

  // cross-corpus table over the last stage's datasets, restricted to
  // modality-compatible stage checkpoints
  const train::StageSpec& last = cfg.stages.back();
  std::vector<std::pair<std::string, const data::Dataset*>> eval_sets;
  for (const std::string& ref : last.datasets) {
    eval_sets.push_back({ref, &store.resolve(ref)});
  }
  const std::string want =
      data::modality_name(eval_sets.front().second->modality);
  std::vector<eval::NamedModel> models;
  for (std::size_t k = 0; k < results.size(); ++k) {
    if (results[k].meta.modality != want && results[k].meta.modality != "mixed") {
      continue;
    }
    models.push_back({"stage" + std::to_string(k) + "_" + results[k].meta.stage_kind,
                      &results[k].params, &results[k].meta, 0});
  }
  if (!models.empty()) {
    eval::CrossCorpusTable table = eval::cross_corpus_table(models, eval_sets);
    const std::string rendered = eval::format_table(table);
    std::fputs(rendered.c_str(), stdout);
    write_text(out / "cross_corpus.txt", rendered);
    write_text(out / "cross_corpus.csv", eval::table_csv(table));
  }
  std::printf("artifacts under %s\n", out.c_str());
  return kExitOk;
}

inline int run_synth(const Invocation& inv) {
  config::PipelineConfig cfg = load_config(inv);
  if (cfg.synths.empty()) throw ConfigError("config declares no synth block");
  const std::filesystem::path out = resolve_out_dir(inv, cfg);

  for (const config::SynthDecl& decl : cfg.synths) {
    auto [a, b] = data::synth_generate(decl.spec, decl.seed);
    for (const auto* ds : {&a, &b}) {
      const std::string side = ds == &a ? "a" : "b";
      const std::filesystem::path dir = out / (decl.name + "_" + side);
      std::filesystem::create_directories(dir);
      std::string manifest = "path,label\n";
      for (std::size_t i = 0; i < ds->samples.size(); ++i) {
        const std::string file = ds->samples[i].group_id + ".rtn";
        data::write_raw_image(dir / file, ds->samples[i].x);
        manifest += file + "," + data::emotion_classes()[ds->samples[i].label] + "\n";
      }
      write_text(dir / "manifest.csv", manifest);
      std::printf("%s_%s: %zu samples -> %s\n", decl.name.c_str(), side.c_str(),
                  ds->samples.size(), dir.c_str());
    }
  }
  return kExitOk;
}

inline int run_features(const Invocation& inv) {
  config::PipelineConfig cfg = load_config(inv);
  const std::filesystem::path out = resolve_out_dir(inv, cfg);
  std::filesystem::create_directories(out);

  std::vector<std::pair<std::string, std::filesystem::path>> wavs;
  if (!inv.manifest.empty()) {
    // reuse the manifest format, but only to list files here
    std::ifstream is(inv.manifest);
    if (!is) throw DataError("cannot open manifest " + inv.manifest);
    const std::filesystem::path base =
        std::filesystem::path(inv.manifest).parent_path();
    std::string line;
    bool header = true;
    while (std::getline(is, line)) {
      if (header) {
        header = false;
        continue;
      }
      const std::size_t comma = line.find(',');
      if (comma == std::string::npos) continue;
      const std::string rel = config::detail::trim(line.substr(0, comma));
      if (!rel.empty()) wavs.push_back({rel, base / rel});
    }
  }
  for (const std::string& f : inv.inputs) wavs.push_back({f, f});
  if (wavs.empty()) throw ConfigError("features: no wav inputs given");

  std::size_t total = 0;
  for (const auto& [name, path] : wavs) {
    const audio::Waveform w = audio::read_wav(path);
    const auto segs = audio::extract_segments(w, name);
    const std::filesystem::path seg_path =
        out / (std::filesystem::path(name).stem().string() + ".seg");
    audio::write_segment_cache(seg_path, segs);
    std::printf("%s: %zu segments -> %s\n", name.c_str(), segs.size(),
                seg_path.c_str());
    total += segs.size();
  }
  std::printf("total segments: %zu\n", total);
  return kExitOk;
}

inline int run_gradcheck(const Invocation& inv) {
  const auto items = nn::run_gradient_suite(inv.gradcheck_seeds);
  bool all_pass = true;
  double worst_overall = 0.0;
  for (const auto& item : items) {
    std::printf("gradcheck %-22s max_rel_err=%.3e tol=%.0e %s\n", item.name.c_str(),
                item.worst, item.tol, item.pass() ? "ok" : "FAIL");
    all_pass = all_pass && item.pass();
    worst_overall = std::max(worst_overall, item.worst);
  }
  std::printf("gradcheck overall worst=%.3e seeds=%zu\n", worst_overall,
              inv.gradcheck_seeds);
  if (!all_pass) throw NumericError("gradient check exceeded tolerance");
  return kExitOk;
}

inline int run_eval(const Invocation& inv) {
  config::PipelineConfig cfg = load_config(inv);
  if (inv.checkpoints.empty()) throw ConfigError("eval: no checkpoints given");
  if (inv.eval_datasets.empty()) throw ConfigError("eval: no datasets given");
  DatasetStore store(cfg);
  const std::filesystem::path out = resolve_out_dir(inv, cfg);
  std::filesystem::create_directories(out);

  std::vector<nn::LoadedCheckpoint> loaded;
  for (const std::string& path : inv.checkpoints) {
    loaded.push_back(nn::load_checkpoint(path));
  }
  std::vector<eval::NamedModel> models;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    int head = 0;
    if (inv.head == "1") head = 1;
    if (inv.head == "2") head = 2;
    const std::string name = std::filesystem::path(inv.checkpoints[i]).stem().string();
    if (inv.head == "both") {
      models.push_back({name + "/h1", &loaded[i].params, &loaded[i].meta, 1});
      models.push_back({name + "/h2", &loaded[i].params, &loaded[i].meta, 2});
    } else {
      models.push_back({name, &loaded[i].params, &loaded[i].meta, head});
    }
  }
  std::vector<std::pair<std::string, const data::Dataset*>> sets;
  for (const std::string& ref : inv.eval_datasets) {
    sets.push_back({ref, &store.resolve(ref)});
  }
  eval::CrossCorpusTable table = eval::cross_corpus_table(models, sets);
  const std::string rendered = eval::format_table(table);
  std::fputs(rendered.c_str(), stdout);
  write_text(out / "cross_corpus.txt", rendered);
  write_text(out / "cross_corpus.csv", eval::table_csv(table));
  return kExitOk;
}

}  // namespace detail

// Dispatches one command; exceptions map to the documented exit codes and a
// single machine-parseable status line on stdout.
inline int run(const Invocation& inv) {
  int code = kExitOk;
  std::string kind, message;
  try {
    if (inv.command == "pretrain") {
      detail::run_single_stage(inv, train::StageKind::kPretrain);
    } else if (inv.command == "finetune") {
      detail::run_single_stage(inv, train::StageKind::kFinetune);
    } else if (inv.command == "joint-train") {
      detail::run_single_stage(inv, train::StageKind::kJoint);
    } else if (inv.command == "pipeline") {
      detail::run_pipeline_cmd(inv);
    } else if (inv.command == "synth") {
      detail::run_synth(inv);
    } else if (inv.command == "features") {
      detail::run_features(inv);
    } else if (inv.command == "gradcheck") {
      detail::run_gradcheck(inv);
    } else if (inv.command == "eval") {
      detail::run_eval(inv);
    } else {
      throw ConfigError("unknown command '" + inv.command + "'");
    }
  } catch (const ConfigError& e) {
    code = kExitUsage;
    kind = "usage";
    message = e.what();
  } catch (const NumericError& e) {
    code = kExitNumeric;
    kind = "numeric";
    message = e.what();
  } catch (const Error& e) {
    code = kExitData;
    kind = "data";
    message = e.what();
  } catch (const std::exception& e) {
    code = kExitData;
    kind = "data";
    message = e.what();
  }
  if (code == kExitOk) {
    std::printf("status=ok command=%s\n", inv.command.c_str());
  } else {
    for (char& c : message) {
      if (c == '"' || c == '\n') c = '\'';
    }
    std::printf("status=error code=%d kind=%s command=%s message=\"%s\"\n", code,
                kind.c_str(), inv.command.c_str(), message.c_str());
  }
  return code;
}

}  // namespace emocross::cli
