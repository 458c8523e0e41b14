#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "emocross/checkpoint.hpp"
#include "emocross/dataset.hpp"
#include "emocross/model.hpp"

namespace emocross::train {

enum class StageKind { kPretrain, kFinetune, kJoint };
enum class FreezePolicy { kAllTrainable, kFcOnly };

inline std::string kind_name(StageKind k) {
  switch (k) {
    case StageKind::kPretrain: return "pretrain";
    case StageKind::kFinetune: return "finetune";
    case StageKind::kJoint: return "joint";
  }
  return "?";
}

inline StageKind parse_kind(const std::string& s) {
  if (s == "pretrain") return StageKind::kPretrain;
  if (s == "finetune") return StageKind::kFinetune;
  if (s == "joint") return StageKind::kJoint;
  throw ConfigError("stage: unknown kind '" + s + "'");
}

inline std::string freeze_name(FreezePolicy f) {
  return f == FreezePolicy::kAllTrainable ? "all_trainable" : "fc_only";
}

inline FreezePolicy parse_freeze(const std::string& s) {
  if (s == "all_trainable") return FreezePolicy::kAllTrainable;
  if (s == "fc_only") return FreezePolicy::kFcOnly;
  throw ConfigError("stage: unknown freeze policy '" + s + "'");
}

// One stage of the transfer pipeline. `init` is "fresh", "prev", "stageN",
// or a checkpoint path.
struct StageSpec {
  StageKind kind = StageKind::kPretrain;
  std::vector<std::string> datasets;
  std::string init = "fresh";
  FreezePolicy freeze = FreezePolicy::kAllTrainable;
  double lr = 1e-4;
  std::size_t iterations = 1000;
  std::size_t batch = 2;
  double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 0.01;
  double margin = 1.0;
  std::uint64_t seed = 0;
  std::string name;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("stage: lr must be positive");
    if (iterations == 0) throw ConfigError("stage: iterations must be positive");
    if (batch == 0) throw ConfigError("stage: batch must be positive");
    if (!(margin > 0.0)) throw ConfigError("stage: margin must be positive");
    switch (kind) {
      case StageKind::kPretrain:
        if (datasets.size() != 1) throw ConfigError("stage: pretrain takes 1 dataset");
        if (init != "fresh") throw ConfigError("stage: pretrain requires init=fresh");
        break;
      case StageKind::kFinetune:
        if (datasets.size() != 1) throw ConfigError("stage: finetune takes 1 dataset");
        if (init == "fresh") throw ConfigError("stage: finetune requires a checkpoint init");
        break;
      case StageKind::kJoint:
        if (datasets.size() != 2) throw ConfigError("stage: joint takes 2 datasets");
        if (init == "fresh") throw ConfigError("stage: joint requires a checkpoint init");
        break;
    }
  }
};

// ---------------------------------------------------------------------------
// training log
// ---------------------------------------------------------------------------

struct LogRow {
  std::size_t t = 0;
  double l1 = 0.0, l2 = 0.0, lc = 0.0, l_joint = 0.0;
  double gnorm_e = 0.0, gnorm_c1 = 0.0, gnorm_c2 = 0.0;
};

struct TrainLog {
  std::vector<LogRow> rows;

  std::string to_csv() const {
    std::string out = "t,L1,L2,Lc,L_joint,grad_norm_e,grad_norm_c1,grad_norm_c2\n";
    char buf[256];
    for (const LogRow& r : rows) {
      std::snprintf(buf, sizeof(buf),
                    "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.t, r.l1,
                    r.l2, r.lc, r.l_joint, r.gnorm_e, r.gnorm_c1, r.gnorm_c2);
      out += buf;
    }
    return out;
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("train log: cannot write " + path.string());
    os << to_csv();
  }
};

// ---------------------------------------------------------------------------
// gradients and the SGD update
// ---------------------------------------------------------------------------

struct ModelGrads {
  nn::ExtractorGrads e;
  Tensor d_c1_w, d_c1_b, d_c2_w, d_c2_b;
  Tensor d_match_w, d_match_b;  // defined only with a projection head

  static ModelGrads zeros_like(const nn::ModelParams& p) {
    ModelGrads g;
    g.e = nn::ExtractorGrads::zeros_like(p);
    g.d_c1_w = Tensor(p.head1.weight.shape());
    g.d_c1_b = Tensor(p.head1.bias.shape());
    g.d_c2_w = Tensor(p.head2.weight.shape());
    g.d_c2_b = Tensor(p.head2.bias.shape());
    if (p.match.has_projection) {
      g.d_match_w = Tensor(p.match.weight.shape());
      g.d_match_b = Tensor(p.match.bias.shape());
    }
    return g;
  }

  double norm_e() const {
    double s = 0.0;
    for (const Tensor& t : e.grads) s += t.squared_norm();
    return std::sqrt(s);
  }
  double norm_c1() const { return std::sqrt(d_c1_w.squared_norm() + d_c1_b.squared_norm()); }
  double norm_c2() const { return std::sqrt(d_c2_w.squared_norm() + d_c2_b.squared_norm()); }

  bool all_finite() const {
    for (const Tensor& t : e.grads) {
      if (!t.all_finite()) return false;
    }
    return d_c1_w.all_finite() && d_c1_b.all_finite() && d_c2_w.all_finite() &&
           d_c2_b.all_finite() &&
           (!d_match_w.defined() || (d_match_w.all_finite() && d_match_b.all_finite()));
  }
};

// theta <- theta - lr * grad for every unfrozen group. Under fc_only the four
// conv blocks (conv weights/biases and their GN affine parameters) stay
// bit-identical; FC layers, both heads and the match projection still train.
inline void sgd_step(nn::ModelParams& p, const ModelGrads& g, double lr,
                     FreezePolicy freeze) {
  if (!(lr > 0.0)) throw ContractError("sgd_step: lr must be positive");
  for (std::size_t i = 0; i < p.extractor.size(); ++i) {
    if (freeze == FreezePolicy::kFcOnly && nn::ModelParams::is_conv_block_index(i)) {
      continue;
    }
    add_scaled(p.extractor[i].value, g.e.grads[i], -lr);
  }
  add_scaled(p.head1.weight, g.d_c1_w, -lr);
  add_scaled(p.head1.bias, g.d_c1_b, -lr);
  add_scaled(p.head2.weight, g.d_c2_w, -lr);
  add_scaled(p.head2.bias, g.d_c2_b, -lr);
  if (p.match.has_projection && g.d_match_w.defined()) {
    add_scaled(p.match.weight, g.d_match_w, -lr);
    add_scaled(p.match.bias, g.d_match_b, -lr);
  }
}

// ---------------------------------------------------------------------------
// the joint update (Algorithm-1 assembly)
// ---------------------------------------------------------------------------

struct JointTerms {
  double l1 = 0.0, l2 = 0.0, lc = 0.0, l_joint = 0.0;
  ModelGrads grads;
};

// Assembles the joint gradients for one pair of mini-batches: both batches
// feed both classifier heads; the contrastive term runs over the full K_i*K_j
// pair grid, mean-reduced, and everything lands in one extractor backward
// pass per batch. Loss weights scale their gradient terms so the assembly is
// the exact gradient of l_joint = lambda1*L1 + lambda2*L2 + lambda3*Lc.
inline JointTerms joint_gradients(const nn::ModelParams& p, const Tensor& xi,
                                  const std::vector<int>& li, const Tensor& xj,
                                  const std::vector<int>& lj, double lambda1,
                                  double lambda2, double lambda3, nn::Mode mode,
                                  Rng* rng = nullptr) {
  JointTerms out;
  out.grads = ModelGrads::zeros_like(p);

  const nn::FeatureCache cache_i = nn::forward_features_cached(xi, p, mode, rng);
  const nn::FeatureCache cache_j = nn::forward_features_cached(xj, p, mode, rng);
  const Tensor& fi = cache_i.features();
  const Tensor& fj = cache_j.features();

  const nn::LossOutput ce_i1 = nn::cross_entropy(fi, li, p.head1);
  const nn::LossOutput ce_j1 = nn::cross_entropy(fj, lj, p.head1);
  const nn::LossOutput ce_i2 = nn::cross_entropy(fi, li, p.head2);
  const nn::LossOutput ce_j2 = nn::cross_entropy(fj, lj, p.head2);
  out.l1 = ce_i1.value + ce_j1.value;
  out.l2 = ce_i2.value + ce_j2.value;

  add_scaled(out.grads.d_c1_w, ce_i1.d_head[0], lambda1);
  add_scaled(out.grads.d_c1_w, ce_j1.d_head[0], lambda1);
  add_scaled(out.grads.d_c1_b, ce_i1.d_head[1], lambda1);
  add_scaled(out.grads.d_c1_b, ce_j1.d_head[1], lambda1);
  add_scaled(out.grads.d_c2_w, ce_i2.d_head[0], lambda2);
  add_scaled(out.grads.d_c2_w, ce_j2.d_head[0], lambda2);
  add_scaled(out.grads.d_c2_b, ce_i2.d_head[1], lambda2);
  add_scaled(out.grads.d_c2_b, ce_j2.d_head[1], lambda2);

  Tensor d_fi(fi.shape());
  Tensor d_fj(fj.shape());
  const std::size_t ki = fi.dim(0), kj = fj.dim(0);
  const double inv_pairs = 1.0 / static_cast<double>(ki * kj);
  for (std::size_t a = 0; a < ki; ++a) {
    const Tensor fa = row_of(fi, a);
    for (std::size_t b = 0; b < kj; ++b) {
      const Tensor fb = row_of(fj, b);
      const int y = nn::pair_label(li[a], lj[b]);
      const nn::ContrastiveOutput co = nn::contrastive(fa, fb, y, p.match);
      out.lc += co.value * inv_pairs;
      add_to_row(d_fi, a, co.d_fi, lambda3 * inv_pairs);
      add_to_row(d_fj, b, co.d_fj, lambda3 * inv_pairs);
      if (p.match.has_projection) {
        add_scaled(out.grads.d_match_w, co.d_head[0], lambda3 * inv_pairs);
        add_scaled(out.grads.d_match_b, co.d_head[1], lambda3 * inv_pairs);
      }
    }
  }

  add_scaled(d_fi, ce_i1.d_feature, lambda1);
  add_scaled(d_fi, ce_i2.d_feature, lambda2);
  add_scaled(d_fj, ce_j1.d_feature, lambda1);
  add_scaled(d_fj, ce_j2.d_feature, lambda2);

  nn::backward_features(cache_i, p, d_fi, out.grads.e);
  nn::backward_features(cache_j, p, d_fj, out.grads.e);

  out.l_joint = nn::joint_loss(out.l1, out.l2, out.lc, lambda1, lambda2, lambda3);
  return out;
}

// Deterministic scalar used by the finite-difference check of the assembly.
inline double joint_loss_value(const nn::ModelParams& p, const Tensor& xi,
                               const std::vector<int>& li, const Tensor& xj,
                               const std::vector<int>& lj, double lambda1,
                               double lambda2, double lambda3) {
  const Tensor fi = nn::forward_features(xi, p, nn::Mode::kEval);
  const Tensor fj = nn::forward_features(xj, p, nn::Mode::kEval);
  const double l1 = nn::cross_entropy(fi, li, p.head1).value +
                    nn::cross_entropy(fj, lj, p.head1).value;
  const double l2 = nn::cross_entropy(fi, li, p.head2).value +
                    nn::cross_entropy(fj, lj, p.head2).value;
  double lc = 0.0;
  const double inv_pairs = 1.0 / static_cast<double>(fi.dim(0) * fj.dim(0));
  for (std::size_t a = 0; a < fi.dim(0); ++a) {
    for (std::size_t b = 0; b < fj.dim(0); ++b) {
      lc += inv_pairs * nn::contrastive(row_of(fi, a), row_of(fj, b),
                                        nn::pair_label(li[a], lj[b]), p.match)
                            .value;
    }
  }
  return nn::joint_loss(l1, l2, lc, lambda1, lambda2, lambda3);
}

// ---------------------------------------------------------------------------
// stage runners
// ---------------------------------------------------------------------------

struct StageResult {
  nn::ModelParams params;
  nn::CheckpointMeta meta;
  TrainLog log;
};

namespace detail {

inline void check_finite_or_abort(double loss, std::size_t t, const std::string& what) {
  if (!std::isfinite(loss)) {
    throw NumericError(what + ": non-finite loss at iteration " + std::to_string(t) +
                       "; last good iteration " + std::to_string(t - 1));
  }
}

inline nn::CheckpointMeta stage_meta(const StageSpec& spec,
                                     const std::vector<const data::Dataset*>& ds,
                                     const nn::InputStats& stats) {
  nn::CheckpointMeta meta;
  meta.stage_kind = kind_name(spec.kind);
  meta.stage_name = spec.name.empty() ? kind_name(spec.kind) : spec.name;
  for (const auto* d : ds) meta.dataset_ids.push_back(d->id);
  meta.modality = ds.size() == 2 && ds[0]->modality != ds[1]->modality
                      ? "mixed"
                      : data::modality_name(ds[0]->modality);
  meta.iterations = spec.iterations;
  meta.seed = spec.seed;
  meta.input_stats = stats;
  return meta;
}

}  // namespace detail

// Single-dataset classification training through head 1 (shared by pretrain
// and fine-tune; they differ in initialization and freeze policy).
inline StageResult run_classification_stage(const nn::ArchConfig& arch,
                                            const StageSpec& spec,
                                            const data::Dataset& ds,
                                            nn::ModelParams init_params) {
  spec.validate();
  ds.validate();
  nn::require_same_arch(init_params.arch, arch, kind_name(spec.kind));

  StageResult res;
  res.params = std::move(init_params);
  res.params.match.margin = spec.margin;

  auto [mean, stddev] = data::compute_input_stats({&ds});
  nn::InputStats stats{mean, stddev};
  res.meta = detail::stage_meta(spec, {&ds}, stats);

  data::BatchSampler sampler(ds.size(), derive_seed(spec.seed, 1));
  Rng dropout_rng(derive_seed(spec.seed, 2));

  for (std::size_t t = 1; t <= spec.iterations; ++t) {
    const auto idx = sampler.next(spec.batch);
    const Tensor x = data::assemble_batch(ds, idx, mean, stddev);
    const std::vector<int> labels = data::labels_of(ds, idx);

    const nn::FeatureCache cache =
        nn::forward_features_cached(x, res.params, nn::Mode::kTrain, &dropout_rng);
    const nn::LossOutput ce = nn::cross_entropy(cache.features(), labels,
                                                res.params.head1);
    detail::check_finite_or_abort(ce.value, t, kind_name(spec.kind));

    ModelGrads grads = ModelGrads::zeros_like(res.params);
    add_scaled(grads.d_c1_w, ce.d_head[0], 1.0);
    add_scaled(grads.d_c1_b, ce.d_head[1], 1.0);
    nn::backward_features(cache, res.params, ce.d_feature, grads.e);

    LogRow row;
    row.t = t;
    row.l1 = ce.value;
    row.l_joint = ce.value;
    row.gnorm_e = grads.norm_e();
    row.gnorm_c1 = grads.norm_c1();
    res.log.rows.push_back(row);

    sgd_step(res.params, grads, spec.lr, spec.freeze);
  }
  return res;
}

inline StageResult run_pretrain(const nn::ArchConfig& arch, const StageSpec& spec,
                                const data::Dataset& ds) {
  if (spec.kind != StageKind::kPretrain) {
    throw ConfigError("run_pretrain: stage kind is " + kind_name(spec.kind));
  }
  return run_classification_stage(arch, spec, ds, nn::build_model(arch, spec.seed));
}

inline StageResult run_finetune(const nn::ArchConfig& arch, const StageSpec& spec,
                                const data::Dataset& ds,
                                const nn::ModelParams& init) {
  if (spec.kind != StageKind::kFinetune) {
    throw ConfigError("run_finetune: stage kind is " + kind_name(spec.kind));
  }
  return run_classification_stage(arch, spec, ds, init);
}

// Joint learning on two datasets: per iteration one K*K pair batch, gradient
// assembly as in joint_gradients, all parameter groups updated together.
inline StageResult run_joint(const nn::ArchConfig& arch, const StageSpec& spec,
                             const data::Dataset& ds_a, const data::Dataset& ds_b,
                             const nn::ModelParams& init) {
  if (spec.kind != StageKind::kJoint) {
    throw ConfigError("run_joint: stage kind is " + kind_name(spec.kind));
  }
  spec.validate();
  ds_a.validate();
  ds_b.validate();
  nn::require_same_arch(init.arch, arch, "joint");

  StageResult res;
  res.params = init;
  res.params.match.margin = spec.margin;

  auto [mean, stddev] = data::compute_input_stats({&ds_a, &ds_b});
  nn::InputStats stats{mean, stddev};
  res.meta = detail::stage_meta(spec, {&ds_a, &ds_b}, stats);

  data::BatchSampler sampler_a(ds_a.size(), derive_seed(spec.seed, 1));
  data::BatchSampler sampler_b(ds_b.size(), derive_seed(spec.seed, 2));
  Rng dropout_rng(derive_seed(spec.seed, 3));

  for (std::size_t t = 1; t <= spec.iterations; ++t) {
    const data::PairBatch pb =
        data::sample_pair_batch(ds_a, ds_b, spec.batch, sampler_a, sampler_b);
    const Tensor xi = data::assemble_batch(ds_a, pb.idx_i, mean, stddev);
    const Tensor xj = data::assemble_batch(ds_b, pb.idx_j, mean, stddev);
    const std::vector<int> li = data::labels_of(ds_a, pb.idx_i);
    const std::vector<int> lj = data::labels_of(ds_b, pb.idx_j);

    JointTerms terms =
        joint_gradients(res.params, xi, li, xj, lj, spec.lambda1, spec.lambda2,
                        spec.lambda3, nn::Mode::kTrain, &dropout_rng);
    detail::check_finite_or_abort(terms.l_joint, t, "joint");

    LogRow row;
    row.t = t;
    row.l1 = terms.l1;
    row.l2 = terms.l2;
    row.lc = terms.lc;
    row.l_joint = terms.l_joint;
    row.gnorm_e = terms.grads.norm_e();
    row.gnorm_c1 = terms.grads.norm_c1();
    row.gnorm_c2 = terms.grads.norm_c2();
    res.log.rows.push_back(row);

    sgd_step(res.params, terms.grads, spec.lr, spec.freeze);
  }
  return res;
}

// ---------------------------------------------------------------------------
// pipeline orchestration
// ---------------------------------------------------------------------------

using DatasetResolver = std::function<const data::Dataset&(const std::string&)>;

// Runs stages in order, threading checkpoints. `init` tokens resolve to a
// prior stage's output ("prev", "stageN") or to a checkpoint path. When
// out_dir is given, every stage writes its checkpoint and log there.
inline std::vector<StageResult> run_pipeline(const nn::ArchConfig& arch,
                                             const std::vector<StageSpec>& stages,
                                             const DatasetResolver& resolve,
                                             const std::filesystem::path& out_dir = {}) {
  std::vector<StageResult> results;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const StageSpec& spec = stages[k];
    try {
      spec.validate();
      nn::ModelParams init_params;
      bool have_init = false;
      if (spec.init != "fresh") {
        if (spec.init == "prev") {
          if (results.empty()) throw ConfigError("init=prev needs a prior stage");
          init_params = results.back().params;
        } else if (spec.init.rfind("stage", 0) == 0) {
          const std::size_t n = std::stoul(spec.init.substr(5));
          if (n >= results.size()) {
            throw ConfigError("init=" + spec.init + " is not a prior stage");
          }
          init_params = results[n].params;
        } else {
          nn::LoadedCheckpoint lc = nn::load_checkpoint(spec.init);
          nn::require_same_arch(lc.params.arch, arch, "init");
          init_params = std::move(lc.params);
        }
        have_init = true;
      }

      StageResult res;
      switch (spec.kind) {
        case StageKind::kPretrain:
          res = run_pretrain(arch, spec, resolve(spec.datasets[0]));
          break;
        case StageKind::kFinetune:
          if (!have_init) throw ConfigError("finetune without init");
          res = run_finetune(arch, spec, resolve(spec.datasets[0]), init_params);
          break;
        case StageKind::kJoint:
          if (!have_init) throw ConfigError("joint without init");
          res = run_joint(arch, spec, resolve(spec.datasets[0]),
                          resolve(spec.datasets[1]), init_params);
          break;
      }
      res.meta.stage_index = static_cast<std::uint32_t>(k);

      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const std::string stem = "stage" + std::to_string(k) + "_" +
                                 (spec.name.empty() ? kind_name(spec.kind) : spec.name);
        nn::save_checkpoint(res.params, res.meta, out_dir / (stem + ".ckpt"));
        res.log.write_csv(out_dir / (stem + "_log.csv"));
      }
      results.push_back(std::move(res));
    } catch (const PipelineError&) {
      throw;
    } catch (const Error& e) {
      throw PipelineError("stage " + std::to_string(k) + " (" +
                          kind_name(spec.kind) + "): " + e.what());
    }
  }
  return results;
}

}  // namespace emocross::train
