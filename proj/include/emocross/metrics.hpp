#pragma once

#include <array>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "emocross/train.hpp"

namespace emocross::eval {

struct Metrics {
  double accuracy = 0.0;
  double war = 0.0;  // recall weighted by class priors == pooled accuracy
  double uar = 0.0;  // unweighted average recall over classes present
  std::array<std::array<std::uint64_t, 6>, 6> confusion{};  // [true][pred]
  std::array<double, 6> per_class_recall{};
  std::uint64_t total = 0;

  // The independent float route for the WAR identity: sum_c (n_c/N)*recall_c.
  // The stored war uses the algebraically simplified trace/total, where the
  // class priors cancel the recall denominators exactly.
  double weighted_recall_check() const {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      std::uint64_t n_c = 0;
      for (std::size_t j = 0; j < 6; ++j) n_c += confusion[c][j];
      if (n_c > 0) {
        s += (static_cast<double>(n_c) / static_cast<double>(total)) *
             per_class_recall[c];
      }
    }
    return s;
  }
};

inline Metrics metrics_from_confusion(
    const std::array<std::array<std::uint64_t, 6>, 6>& confusion) {
  Metrics m;
  m.confusion = confusion;
  std::uint64_t trace = 0;
  std::size_t classes_present = 0;
  double recall_sum = 0.0;
  for (std::size_t c = 0; c < 6; ++c) {
    std::uint64_t n_c = 0;
    for (std::size_t j = 0; j < 6; ++j) n_c += confusion[c][j];
    m.total += n_c;
    trace += confusion[c][c];
    if (n_c > 0) {
      m.per_class_recall[c] =
          static_cast<double>(confusion[c][c]) / static_cast<double>(n_c);
      recall_sum += m.per_class_recall[c];
      ++classes_present;
    }
  }
  if (m.total == 0) throw DataError("metrics: empty evaluation");
  m.accuracy = static_cast<double>(trace) / static_cast<double>(m.total);
  m.war = m.accuracy;
  m.uar = recall_sum / static_cast<double>(classes_present);
  return m;
}

// ---------------------------------------------------------------------------
// checkpoint evaluation
// ---------------------------------------------------------------------------

inline void require_compatible(const nn::ModelParams& params,
                               const nn::CheckpointMeta& meta,
                               const data::Dataset& ds) {
  if (!ds.samples.empty()) {
    const Tensor& x = ds.samples.front().x;
    if (x.dim(0) != params.arch.input_channels ||
        x.dim(1) != params.arch.input_height ||
        x.dim(2) != params.arch.input_width) {
      throw CheckpointArchError("evaluate: dataset '" + ds.id + "' samples are " +
                                shape_str(x.shape()) +
                                ", checkpoint expects [" +
                                std::to_string(params.arch.input_channels) + "," +
                                std::to_string(params.arch.input_height) + "," +
                                std::to_string(params.arch.input_width) + "]");
    }
  }
  const std::string ds_mod = data::modality_name(ds.modality);
  if (meta.modality != "mixed" && !meta.modality.empty() && meta.modality != ds_mod) {
    throw CheckpointArchError("evaluate: dataset '" + ds.id + "' is " + ds_mod +
                              " but the checkpoint was trained on " + meta.modality +
                              " inputs");
  }
}

// Eval-mode inference. Samples sharing a group id (audio segments of one
// utterance) aggregate by majority vote over segment argmaxes; ties fall back
// to the argmax of the summed probabilities.
inline Metrics evaluate(const nn::ModelParams& params, const nn::CheckpointMeta& meta,
                        const data::Dataset& ds, int head) {
  ds.validate();
  require_compatible(params, meta, ds);

  struct GroupTally {
    std::array<std::uint64_t, 6> votes{};
    std::array<double, 6> prob_sum{};
    int label = 0;
  };
  std::vector<std::string> group_order;
  std::map<std::string, GroupTally> groups;

  const std::size_t chunk = 32;
  for (std::size_t at = 0; at < ds.size(); at += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(ds.size(), at + chunk); ++i) idx.push_back(i);
    const Tensor x = data::assemble_batch(ds, idx, meta.input_stats.mean,
                                          meta.input_stats.stddev);
    const Tensor f = nn::forward_features(x, params, nn::Mode::kEval);
    const Tensor probs = nn::classify(f, head, params);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const data::Sample& s = ds.samples[idx[r]];
      auto it = groups.find(s.group_id);
      if (it == groups.end()) {
        group_order.push_back(s.group_id);
        it = groups.emplace(s.group_id, GroupTally{}).first;
        it->second.label = s.label;
      }
      std::size_t amax = 0;
      for (std::size_t j = 1; j < 6; ++j) {
        if (probs(r, j) > probs(r, amax)) amax = j;
      }
      it->second.votes[amax]++;
      for (std::size_t j = 0; j < 6; ++j) it->second.prob_sum[j] += probs(r, j);
    }
  }

  std::array<std::array<std::uint64_t, 6>, 6> confusion{};
  for (const std::string& gid : group_order) {
    const GroupTally& g = groups[gid];
    std::size_t best = 0;
    bool tie = false;
    for (std::size_t j = 1; j < 6; ++j) {
      if (g.votes[j] > g.votes[best]) {
        best = j;
        tie = false;
      } else if (g.votes[j] == g.votes[best]) {
        tie = true;
      }
    }
    if (tie) {
      std::size_t amax = 0;
      for (std::size_t j = 1; j < 6; ++j) {
        if (g.prob_sum[j] > g.prob_sum[amax]) amax = j;
      }
      best = amax;
    }
    confusion[static_cast<std::size_t>(g.label)][best]++;
  }
  return metrics_from_confusion(confusion);
}

inline Metrics evaluate(const train::StageResult& stage, const data::Dataset& ds,
                        int head) {
  return evaluate(stage.params, stage.meta, ds, head);
}

/// Head matching the dataset's pipeline role: the second dataset of a joint
/// stage reads head 2, everything else head 1.
inline int head_for(const nn::CheckpointMeta& meta, const std::string& dataset_id) {
  if (meta.stage_kind == "joint" && meta.dataset_ids.size() == 2 &&
      meta.dataset_ids[1] == dataset_id) {
    return 2;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// cross-corpus tables (Table-7 layout: models x datasets plus averages)
// ---------------------------------------------------------------------------

struct CrossCorpusTable {
  std::vector<std::string> model_names;
  std::vector<std::string> dataset_names;
  std::vector<std::vector<Metrics>> cells;  // [model][dataset]
  std::vector<double> row_avg;              // unweighted mean accuracy per model
  std::vector<double> col_avg;              // unweighted mean accuracy per dataset
  double overall_avg = 0.0;
};

struct NamedModel {
  std::string name;
  const nn::ModelParams* params;
  const nn::CheckpointMeta* meta;
  int head = 1;  // 0 = pick per dataset via head_for
};

inline CrossCorpusTable cross_corpus_table(
    const std::vector<NamedModel>& models,
    const std::vector<std::pair<std::string, const data::Dataset*>>& datasets) {
  CrossCorpusTable t;
  for (const auto& m : models) t.model_names.push_back(m.name);
  for (const auto& d : datasets) t.dataset_names.push_back(d.first);
  t.cells.resize(models.size());
  t.row_avg.assign(models.size(), 0.0);
  t.col_avg.assign(datasets.size(), 0.0);
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    for (std::size_t di = 0; di < datasets.size(); ++di) {
      const int head = models[mi].head == 0
                           ? head_for(*models[mi].meta, datasets[di].second->id)
                           : models[mi].head;
      Metrics cell = evaluate(*models[mi].params, *models[mi].meta,
                              *datasets[di].second, head);
      t.row_avg[mi] += cell.accuracy;
      t.col_avg[di] += cell.accuracy;
      t.cells[mi].push_back(std::move(cell));
    }
    t.row_avg[mi] /= static_cast<double>(datasets.size());
    t.overall_avg += t.row_avg[mi];
  }
  for (double& v : t.col_avg) v /= static_cast<double>(models.size());
  if (!models.empty()) t.overall_avg /= static_cast<double>(models.size());
  return t;
}

inline std::string format_table(const CrossCorpusTable& t) {
  std::size_t name_w = 5;
  for (const auto& n : t.model_names) name_w = std::max(name_w, n.size());
  std::string out;
  char buf[64];
  out += std::string(name_w, ' ');
  for (const auto& d : t.dataset_names) {
    std::snprintf(buf, sizeof(buf), " | %8s", d.substr(0, 8).c_str());
    out += buf;
  }
  out += " | Avg.\n";
  out += std::string(name_w + t.dataset_names.size() * 11 + 8, '-') + "\n";
  for (std::size_t mi = 0; mi < t.model_names.size(); ++mi) {
    std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(name_w),
                  t.model_names[mi].c_str());
    out += buf;
    for (std::size_t di = 0; di < t.dataset_names.size(); ++di) {
      std::snprintf(buf, sizeof(buf), " |     %.2f", t.cells[mi][di].accuracy);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), " | %.2f\n", t.row_avg[mi]);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(name_w), "Avg.");
  out += buf;
  for (std::size_t di = 0; di < t.dataset_names.size(); ++di) {
    std::snprintf(buf, sizeof(buf), " |     %.2f", t.col_avg[di]);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), " | %.2f\n", t.overall_avg);
  out += buf;
  return out;
}

inline std::string table_csv(const CrossCorpusTable& t) {
  std::string out = "model,dataset,accuracy,war,uar\n";
  char buf[256];
  for (std::size_t mi = 0; mi < t.model_names.size(); ++mi) {
    for (std::size_t di = 0; di < t.dataset_names.size(); ++di) {
      const Metrics& m = t.cells[mi][di];
      std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g\n",
                    t.model_names[mi].c_str(), t.dataset_names[di].c_str(),
                    m.accuracy, m.war, m.uar);
      out += buf;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// within-corpus k-fold protocol: per resampling, train on k-1 folds and
// evaluate the fixed validation fold; repeated with fresh splits.
// ---------------------------------------------------------------------------

struct KFoldReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double variance = 0.0;  // sample variance over resamplings
};

inline KFoldReport run_kfold_protocol(const nn::ArchConfig& arch,
                                      const train::StageSpec& stage_template,
                                      const data::Dataset& ds, std::size_t k,
                                      std::size_t val_fold, std::size_t repeats,
                                      std::uint64_t split_seed) {
  if (val_fold >= k) throw ConfigError("kfold protocol: val_fold out of range");
  KFoldReport report;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto folds = data::kfold_split(ds, k, derive_seed(split_seed, r));
    std::vector<std::size_t> train_idx;
    for (std::size_t f = 0; f < k; ++f) {
      if (f == val_fold) continue;
      train_idx.insert(train_idx.end(), folds[f].begin(), folds[f].end());
    }
    const data::Dataset train_ds = ds.subset(train_idx, "_train");
    const data::Dataset val_ds = ds.subset(folds[val_fold], "_val");

    train::StageSpec spec = stage_template;
    spec.seed = derive_seed(stage_template.seed, 1000 + r);
    spec.datasets = {train_ds.id};
    const train::StageResult res = train::run_pretrain(arch, spec, train_ds);
    report.accuracies.push_back(evaluate(res, val_ds, 1).accuracy);
  }
  for (double a : report.accuracies) report.mean += a;
  report.mean /= static_cast<double>(report.accuracies.size());
  if (report.accuracies.size() > 1) {
    for (double a : report.accuracies) {
      report.variance += (a - report.mean) * (a - report.mean);
    }
    report.variance /= static_cast<double>(report.accuracies.size() - 1);
  }
  return report;
}

}  // namespace emocross::eval
