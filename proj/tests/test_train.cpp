#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <unistd.h>

#include "emocross/gradcheck.hpp"
#include "emocross/train.hpp"

using namespace emocross;
using namespace emocross::train;

namespace {

nn::ArchConfig tiny_arch(double dropout = 0.0) {
  nn::ArchConfig a;
  a.input_height = 16;
  a.input_width = 16;
  a.conv_filters = {2, 2, 4, 4};
  a.fc_dims = {12, 10, 8, 6};
  a.dropout_rate = dropout;
  return a;
}

data::SynthSpec tiny_synth() {
  data::SynthSpec sp;
  sp.per_class = 4;
  sp.height = 16;
  sp.width = 16;
  sp.noise = 0.05;
  return sp;
}

bool params_identical(const nn::ModelParams& a, const nn::ModelParams& b) {
  bool same = true;
  for (std::size_t i = 0; i < a.extractor.size(); ++i) {
    if (max_abs_diff(a.extractor[i].value, b.extractor[i].value) != 0.0) same = false;
  }
  if (max_abs_diff(a.head1.weight, b.head1.weight) != 0.0) same = false;
  if (max_abs_diff(a.head1.bias, b.head1.bias) != 0.0) same = false;
  if (max_abs_diff(a.head2.weight, b.head2.weight) != 0.0) same = false;
  if (max_abs_diff(a.head2.bias, b.head2.bias) != 0.0) same = false;
  return same;
}

}  // namespace

TEST_CASE("sgd_step arithmetic, freeze policy and the zero-gradient identity") {
  nn::ModelParams p = nn::build_model(tiny_arch(), 3);

  SECTION("zero gradients leave every tensor bit-identical") {
    nn::ModelParams before = p;
    ModelGrads g = ModelGrads::zeros_like(p);
    sgd_step(p, g, 0.5, FreezePolicy::kAllTrainable);
    REQUIRE(params_identical(before, p));
  }
  SECTION("theta - lr * grad, elementwise") {
    ModelGrads g = ModelGrads::zeros_like(p);
    p.extractor[0].value[0] = 1.0;
    g.e.grads[0][0] = 2.0;
    sgd_step(p, g, 0.1, FreezePolicy::kAllTrainable);
    REQUIRE(std::abs(p.extractor[0].value[0] - 0.8) < 1e-15);
  }
  SECTION("fc_only freezes the conv blocks but not fc layers or heads") {
    nn::ModelParams before = p;
    ModelGrads g = ModelGrads::zeros_like(p);
    for (auto& t : g.e.grads) t.fill(1.0);
    g.d_c1_w.fill(1.0);
    sgd_step(p, g, 0.01, FreezePolicy::kFcOnly);
    for (std::size_t i = 0; i < 16; ++i) {
      REQUIRE(max_abs_diff(p.extractor[i].value, before.extractor[i].value) == 0.0);
    }
    REQUIRE(max_abs_diff(p.fc_weight(0), before.fc_weight(0)) > 0.0);
    REQUIRE(max_abs_diff(p.head1.weight, before.head1.weight) > 0.0);
  }
}

TEST_CASE("joint gradient assembly matches finite differences of the joint loss") {
  const nn::ArchConfig arch = tiny_arch();  // dropout off: deterministic loss
  nn::ModelParams p = nn::build_model(arch, 11);
  // give the heads some structure so all loss terms are active
  Rng wr(5);
  for (std::size_t i = 0; i < p.head1.weight.size(); ++i) {
    p.head1.weight[i] = 0.2 * wr.normal();
    p.head2.weight[i] = 0.2 * wr.normal();
  }

  auto [a, b] = data::synth_generate(tiny_synth(), 21);
  auto [mean, sd] = data::compute_input_stats({&a, &b});
  const Tensor xi = data::assemble_batch(a, {0, 7}, mean, sd);
  const Tensor xj = data::assemble_batch(b, {3, 12}, mean, sd);
  const std::vector<int> li = data::labels_of(a, {0, 7});
  const std::vector<int> lj = data::labels_of(b, {3, 12});
  const double l1 = 1.0, l2 = 1.0, l3 = 0.01;

  JointTerms terms = joint_gradients(p, xi, li, xj, lj, l1, l2, l3, nn::Mode::kEval);
  REQUIRE(std::abs(terms.l_joint -
                   joint_loss_value(p, xi, li, xj, lj, l1, l2, l3)) < 1e-12);

  // finite differences against theta_e (first conv + a fc layer), both heads
  auto loss_with = [&](const nn::ModelParams& m) {
    return joint_loss_value(m, xi, li, xj, lj, l1, l2, l3);
  };
  for (std::size_t probe : {std::size_t{0}, std::size_t{16}}) {
    auto fn = [&](const Tensor& t) {
      nn::ModelParams m = p;
      m.extractor[probe].value = t;
      return loss_with(m);
    };
    const double err = nn::finite_diff_check(fn, p.extractor[probe].value,
                                             terms.grads.e.grads[probe], 5e-4);
    INFO("theta_e probe " << p.extractor[probe].name);
    REQUIRE(err < 1e-4);
  }
  {
    auto fn = [&](const Tensor& t) {
      nn::ModelParams m = p;
      m.head1.weight = t;
      return loss_with(m);
    };
    REQUIRE(nn::finite_diff_check(fn, p.head1.weight, terms.grads.d_c1_w, 1e-3) < 1e-4);
  }
  {
    auto fn = [&](const Tensor& t) {
      nn::ModelParams m = p;
      m.head2.bias = t;
      return loss_with(m);
    };
    REQUIRE(nn::finite_diff_check(fn, p.head2.bias, terms.grads.d_c2_b, 1e-3) < 1e-4);
  }
}

TEST_CASE("lambda3=0 reduces the joint update to two-head classification") {
  const nn::ArchConfig arch = tiny_arch();
  nn::ModelParams p = nn::build_model(arch, 13);
  auto [a, b] = data::synth_generate(tiny_synth(), 8);
  auto [mean, sd] = data::compute_input_stats({&a, &b});
  const Tensor xi = data::assemble_batch(a, {1, 2}, mean, sd);
  const Tensor xj = data::assemble_batch(b, {4, 5}, mean, sd);
  const std::vector<int> li = data::labels_of(a, {1, 2});
  const std::vector<int> lj = data::labels_of(b, {4, 5});

  JointTerms terms = joint_gradients(p, xi, li, xj, lj, 1.0, 1.0, 0.0, nn::Mode::kEval);

  // classification-only assembly: both batches through both heads
  const Tensor fi = nn::forward_features(xi, p, nn::Mode::kEval);
  const Tensor fj = nn::forward_features(xj, p, nn::Mode::kEval);
  auto ce_i1 = nn::cross_entropy(fi, li, p.head1);
  auto ce_j1 = nn::cross_entropy(fj, lj, p.head1);
  Tensor expect_c1 = ce_i1.d_head[0];
  add_scaled(expect_c1, ce_j1.d_head[0], 1.0);
  REQUIRE(max_abs_diff(terms.grads.d_c1_w, expect_c1) == 0.0);

  nn::FeatureCache ci = nn::forward_features_cached(xi, p, nn::Mode::kEval);
  Tensor d_fi = ce_i1.d_feature;
  add_scaled(d_fi, nn::cross_entropy(fi, li, p.head2).d_feature, 1.0);
  nn::ExtractorGrads eg = nn::ExtractorGrads::zeros_like(p);
  nn::backward_features(ci, p, d_fi, eg);
  // the contrastive term contributed exactly nothing to batch-i's backward
  nn::FeatureCache cj = nn::forward_features_cached(xj, p, nn::Mode::kEval);
  Tensor d_fj = ce_j1.d_feature;
  add_scaled(d_fj, nn::cross_entropy(fj, lj, p.head2).d_feature, 1.0);
  nn::backward_features(cj, p, d_fj, eg);
  for (std::size_t i = 0; i < eg.grads.size(); ++i) {
    REQUIRE(max_abs_diff(terms.grads.e.grads[i], eg.grads[i]) == 0.0);
  }
  // the log still reports the (unweighted) contrastive value
  REQUIRE(terms.lc >= 0.0);
}

TEST_CASE("pretrain is deterministic and starts at ln 6") {
  const nn::ArchConfig arch = tiny_arch(0.5);
  auto [a, b] = data::synth_generate(tiny_synth(), 31);

  StageSpec spec;
  spec.kind = StageKind::kPretrain;
  spec.datasets = {a.id};
  spec.lr = 1e-3;
  spec.iterations = 40;
  spec.batch = 4;
  spec.seed = 9;

  StageResult r1 = run_pretrain(arch, spec, a);
  StageResult r2 = run_pretrain(arch, spec, a);
  REQUIRE(r1.log.to_csv() == r2.log.to_csv());
  REQUIRE(params_identical(r1.params, r2.params));
  REQUIRE(r1.log.rows.size() == 40);
  REQUIRE(std::abs(r1.log.rows.front().l1 - std::log(6.0)) < 0.2);
  for (const LogRow& row : r1.log.rows) {
    REQUIRE(std::isfinite(row.l_joint));
    REQUIRE(std::isfinite(row.gnorm_e));
  }
  REQUIRE(r1.meta.stage_kind == "pretrain");
  REQUIRE(r1.meta.modality == "visual");
  REQUIRE(r1.meta.input_stats.mean.size() == 3);

  StageSpec other = spec;
  other.seed = 10;
  StageResult r3 = run_pretrain(arch, other, a);
  REQUIRE(r1.log.to_csv() != r3.log.to_csv());
}

TEST_CASE("finetune honors the freeze policy bit-exactly") {
  const nn::ArchConfig arch = tiny_arch(0.25);
  auto [a, b] = data::synth_generate(tiny_synth(), 17);

  StageSpec pre;
  pre.kind = StageKind::kPretrain;
  pre.datasets = {a.id};
  pre.lr = 1e-3;
  pre.iterations = 30;
  pre.batch = 4;
  pre.seed = 2;
  StageResult ck = run_pretrain(arch, pre, a);

  StageSpec ft;
  ft.kind = StageKind::kFinetune;
  ft.datasets = {b.id};
  ft.init = "prev";
  ft.freeze = FreezePolicy::kFcOnly;
  ft.lr = 1e-3;
  ft.iterations = 25;
  ft.batch = 4;
  ft.seed = 3;
  StageResult r = run_finetune(arch, ft, b, ck.params);
  for (std::size_t i = 0; i < 16; ++i) {
    REQUIRE(max_abs_diff(r.params.extractor[i].value, ck.params.extractor[i].value) ==
            0.0);
  }
  REQUIRE(max_abs_diff(r.params.fc_weight(0), ck.params.fc_weight(0)) > 0.0);
}

TEST_CASE("finetuning on the pretraining dataset does not regress the loss") {
  const nn::ArchConfig arch = tiny_arch();
  auto [a, b] = data::synth_generate(tiny_synth(), 23);

  StageSpec pre;
  pre.kind = StageKind::kPretrain;
  pre.datasets = {a.id};
  pre.lr = 2e-3;
  pre.iterations = 300;
  pre.batch = 6;
  pre.seed = 4;
  StageResult ck = run_pretrain(arch, pre, a);

  StageSpec ft;
  ft.kind = StageKind::kFinetune;
  ft.datasets = {a.id};
  ft.init = "prev";
  ft.lr = 2e-4;
  ft.iterations = 120;
  ft.batch = 6;
  ft.seed = 4;
  StageResult r = run_finetune(arch, ft, a, ck.params);
  REQUIRE(r.log.rows.back().l1 <= r.log.rows.front().l1 + 1e-6);
}

TEST_CASE("joint stage runs, logs all loss terms, and stays deterministic") {
  const nn::ArchConfig arch = tiny_arch(0.25);
  auto [a, b] = data::synth_generate(tiny_synth(), 41);

  StageSpec pre;
  pre.kind = StageKind::kPretrain;
  pre.datasets = {a.id};
  pre.lr = 1e-3;
  pre.iterations = 20;
  pre.batch = 4;
  pre.seed = 6;
  StageResult ck = run_pretrain(arch, pre, a);

  StageSpec js;
  js.kind = StageKind::kJoint;
  js.datasets = {a.id, b.id};
  js.init = "prev";
  js.lr = 1e-3;
  js.iterations = 30;
  js.batch = 2;
  js.lambda3 = 0.01;
  js.margin = 4.0;
  js.seed = 7;
  StageResult r1 = run_joint(arch, js, a, b, ck.params);
  StageResult r2 = run_joint(arch, js, a, b, ck.params);
  REQUIRE(r1.log.to_csv() == r2.log.to_csv());
  REQUIRE(r1.log.rows.size() == 30);
  for (const LogRow& row : r1.log.rows) {
    REQUIRE(std::isfinite(row.l1));
    REQUIRE(std::isfinite(row.l2));
    REQUIRE(row.lc >= 0.0);
    REQUIRE(std::abs(row.l_joint - (row.l1 + row.l2 + 0.01 * row.lc)) < 1e-12);
  }
  REQUIRE(r1.meta.dataset_ids.size() == 2);
  REQUIRE(r1.params.match.margin == 4.0);
}

TEST_CASE("divergence aborts with the last good iteration") {
  const nn::ArchConfig arch = tiny_arch();
  auto [a, b] = data::synth_generate(tiny_synth(), 3);
  StageSpec spec;
  spec.kind = StageKind::kPretrain;
  spec.datasets = {a.id};
  spec.lr = 1e14;  // guaranteed blow-up
  spec.iterations = 50;
  spec.batch = 4;
  spec.seed = 1;
  try {
    run_pretrain(arch, spec, a);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("last good iteration") != std::string::npos);
  }
}

TEST_CASE("stage spec validation") {
  StageSpec s;
  s.kind = StageKind::kJoint;
  s.datasets = {"a"};
  s.init = "prev";
  REQUIRE_THROWS_AS(s.validate(), ConfigError);
  s.datasets = {"a", "b"};
  s.init = "fresh";
  REQUIRE_THROWS_AS(s.validate(), ConfigError);
  s.init = "prev";
  REQUIRE_NOTHROW(s.validate());
  s.kind = StageKind::kPretrain;
  s.datasets = {"a"};
  s.init = "fresh";
  REQUIRE_NOTHROW(s.validate());
  s.lr = 0.0;
  REQUIRE_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("pipeline threads checkpoints and reports failing stages") {
  namespace fs = std::filesystem;
  const fs::path out =
      fs::temp_directory_path() / ("emocross_pipe_" + std::to_string(::getpid()));
  fs::remove_all(out);

  const nn::ArchConfig arch = tiny_arch(0.25);
  auto [a, b] = data::synth_generate(tiny_synth(), 12);
  const auto resolve = [&](const std::string& name) -> const data::Dataset& {
    if (name == "A") return a;
    if (name == "B") return b;
    throw DataError("unknown dataset " + name);
  };

  SECTION("empty stage list yields no results") {
    REQUIRE(run_pipeline(arch, {}, resolve).empty());
  }

  SECTION("three stages end to end with artifacts") {
    StageSpec s0;
    s0.kind = StageKind::kPretrain;
    s0.datasets = {"A"};
    s0.lr = 1e-3;
    s0.iterations = 15;
    s0.batch = 4;
    s0.seed = 2;
    StageSpec s1 = s0;
    s1.kind = StageKind::kFinetune;
    s1.datasets = {"B"};
    s1.init = "prev";
    s1.freeze = FreezePolicy::kFcOnly;
    StageSpec s2 = s0;
    s2.kind = StageKind::kJoint;
    s2.datasets = {"A", "B"};
    s2.init = "stage0";
    auto results = run_pipeline(arch, {s0, s1, s2}, resolve, out);
    REQUIRE(results.size() == 3);
    REQUIRE(results[2].meta.stage_index == 2);
    REQUIRE(fs::exists(out / "stage0_pretrain.ckpt"));
    REQUIRE(fs::exists(out / "stage1_finetune.ckpt"));
    REQUIRE(fs::exists(out / "stage2_joint_log.csv"));

    // a later stage can reload the written checkpoint byte-compatibly
    auto loaded = nn::load_checkpoint(out / "stage2_joint.ckpt");
    REQUIRE(params_identical(loaded.params, results[2].params));
  }

  SECTION("missing checkpoint fails with the stage index") {
    StageSpec s0;
    s0.kind = StageKind::kPretrain;
    s0.datasets = {"A"};
    s0.lr = 1e-3;
    s0.iterations = 5;
    s0.batch = 4;
    StageSpec s2 = s0;
    s2.kind = StageKind::kFinetune;
    s2.datasets = {"B"};
    s2.init = (out / "missing.ckpt").string();
    try {
      run_pipeline(arch, {s0, s2}, resolve);
      FAIL("expected PipelineError");
    } catch (const PipelineError& e) {
      REQUIRE(std::string(e.what()).find("stage 1") != std::string::npos);
    }
  }
  fs::remove_all(out);
}
