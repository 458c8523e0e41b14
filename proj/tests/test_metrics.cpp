#include <catch2/catch_amalgamated.hpp>

#include "emocross/metrics.hpp"

using namespace emocross;
using namespace emocross::eval;

namespace {

nn::ArchConfig tiny_arch() {
  nn::ArchConfig a;
  a.input_height = 16;
  a.input_width = 16;
  a.conv_filters = {2, 2, 4, 4};
  a.fc_dims = {12, 10, 8, 6};
  a.dropout_rate = 0.0;
  return a;
}

data::SynthSpec tiny_synth(std::size_t per_class = 6) {
  data::SynthSpec sp;
  sp.per_class = per_class;
  sp.height = 16;
  sp.width = 16;
  sp.noise = 0.05;
  return sp;
}

// Predicted class of every sample under the given model (eval mode, head 1).
std::vector<int> model_predictions(const nn::ModelParams& p,
                                   const nn::CheckpointMeta& meta,
                                   const data::Dataset& ds) {
  std::vector<int> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tensor x = data::assemble_batch(ds, {i}, meta.input_stats.mean,
                                    meta.input_stats.stddev);
    Tensor probs = nn::classify(nn::forward_features(x, p, nn::Mode::kEval), 1, p);
    int amax = 0;
    for (int j = 1; j < 6; ++j) {
      if (probs(0, j) > probs(0, amax)) amax = j;
    }
    out.push_back(amax);
  }
  return out;
}

nn::CheckpointMeta identity_meta() {
  nn::CheckpointMeta m;
  m.stage_kind = "pretrain";
  m.modality = "visual";
  m.input_stats = nn::InputStats::identity(3);
  return m;
}

}  // namespace

TEST_CASE("metrics identities from a known confusion matrix") {
  std::array<std::array<std::uint64_t, 6>, 6> c{};
  // 3 classes present: recalls 1.0, 0.5, 0.25
  c[0][0] = 4;
  c[1][1] = 2;
  c[1][3] = 2;
  c[2][2] = 1;
  c[2][0] = 3;
  Metrics m = metrics_from_confusion(c);
  REQUIRE(m.total == 12);
  REQUIRE(m.accuracy == 7.0 / 12.0);
  REQUIRE(m.war == m.accuracy);  // exact identity
  REQUIRE(std::abs(m.weighted_recall_check() - m.accuracy) < 1e-12);
  REQUIRE(m.per_class_recall[0] == 1.0);
  REQUIRE(m.per_class_recall[1] == 0.5);
  REQUIRE(m.per_class_recall[2] == 0.25);
  REQUIRE(std::abs(m.uar - (1.0 + 0.5 + 0.25) / 3.0) < 1e-15);
}

TEST_CASE("a uniform random predictor lands near chance at N=1200") {
  Rng rng(99);
  std::array<std::array<std::uint64_t, 6>, 6> c{};
  for (int i = 0; i < 1200; ++i) {
    c[rng.index(6)][rng.index(6)]++;
  }
  Metrics m = metrics_from_confusion(c);
  REQUIRE(m.accuracy > 1.0 / 6.0 - 0.05);
  REQUIRE(m.accuracy < 1.0 / 6.0 + 0.05);
}

TEST_CASE("empty confusion is rejected") {
  std::array<std::array<std::uint64_t, 6>, 6> c{};
  REQUIRE_THROWS_AS(metrics_from_confusion(c), DataError);
}

TEST_CASE("evaluate scores a perfectly-labeled dataset at accuracy 1") {
  const nn::ArchConfig arch = tiny_arch();
  nn::ModelParams p = nn::build_model(arch, 5);
  Rng wr(2);
  for (std::size_t i = 0; i < p.head1.weight.size(); ++i)
    p.head1.weight[i] = 0.3 * wr.normal();

  auto [a, unused] = data::synth_generate(tiny_synth(), 9);
  (void)unused;
  nn::CheckpointMeta meta = identity_meta();
  // relabel every sample with the model's own prediction
  data::Dataset ds = a;
  const std::vector<int> preds = model_predictions(p, meta, ds);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.samples[i].label = preds[i];

  Metrics m = evaluate(p, meta, ds, 1);
  REQUIRE(m.accuracy == 1.0);
  REQUIRE(m.war == 1.0);
  std::uint64_t off_diag = 0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (i != j) off_diag += m.confusion[i][j];
  REQUIRE(off_diag == 0);
  REQUIRE(std::abs(m.weighted_recall_check() - m.accuracy) < 1e-12);

  // determinism
  Metrics m2 = evaluate(p, meta, ds, 1);
  REQUIRE(m2.accuracy == m.accuracy);
  REQUIRE(m2.confusion == m.confusion);
}

TEST_CASE("group aggregation takes the majority over segments") {
  const nn::ArchConfig arch = tiny_arch();
  nn::CheckpointMeta meta = identity_meta();
  auto [a, unused] = data::synth_generate(tiny_synth(8), 13);
  (void)unused;

  // pick a random head whose predictions are not all one class
  nn::ModelParams p;
  std::vector<int> preds;
  for (std::uint64_t seed = 7; seed < 40; ++seed) {
    p = nn::build_model(arch, seed);
    Rng wr(seed);
    for (std::size_t i = 0; i < p.head1.weight.size(); ++i)
      p.head1.weight[i] = 0.5 * wr.normal();
    preds = model_predictions(p, meta, a);
    bool diverse = false;
    for (int v : preds)
      if (v != preds[0]) diverse = true;
    if (diverse) break;
  }

  // find two samples with the same prediction and one with a different one
  int maj = -1, odd = -1;
  std::size_t i0 = 0, i1 = 0, i2 = 0;
  bool found = false;
  for (std::size_t i = 0; i < preds.size() && !found; ++i) {
    for (std::size_t j = i + 1; j < preds.size() && !found; ++j) {
      if (preds[i] != preds[j]) continue;
      for (std::size_t k = 0; k < preds.size() && !found; ++k) {
        if (preds[k] != preds[i]) {
          i0 = i;
          i1 = j;
          i2 = k;
          maj = preds[i];
          odd = preds[k];
          found = true;
        }
      }
    }
  }
  REQUIRE(found);
  (void)odd;

  data::Dataset ds;
  ds.id = "grouped";
  ds.modality = data::Modality::kVisual;
  const int true_label = 2;
  for (std::size_t idx : {i0, i1, i2}) {
    data::Sample s = a.samples[idx];
    s.group_id = "utterance0";
    s.label = true_label;
    ds.samples.push_back(std::move(s));
  }
  Metrics m = evaluate(p, meta, ds, 1);
  REQUIRE(m.total == 1);  // one group, not three samples
  std::uint64_t row_sum = 0;
  for (int j = 0; j < 6; ++j) row_sum += m.confusion[true_label][j];
  REQUIRE(row_sum == 1);
  REQUIRE(m.confusion[true_label][maj] == 1);  // majority vote wins
}

TEST_CASE("modality compatibility is enforced") {
  const nn::ArchConfig arch = tiny_arch();
  nn::ModelParams p = nn::build_model(arch, 1);
  nn::CheckpointMeta meta = identity_meta();
  meta.modality = "audio";
  auto [a, unused] = data::synth_generate(tiny_synth(), 2);
  (void)unused;
  REQUIRE_THROWS_AS(evaluate(p, meta, a, 1), CheckpointArchError);

  nn::CheckpointMeta shape_meta = identity_meta();
  nn::ArchConfig big = tiny_arch();
  big.input_height = 32;
  big.input_width = 32;
  nn::ModelParams pb = nn::build_model(big, 1);
  REQUIRE_THROWS_AS(evaluate(pb, shape_meta, a, 1), CheckpointArchError);
}

TEST_CASE("head_for follows the dataset's pipeline role") {
  nn::CheckpointMeta meta;
  meta.stage_kind = "joint";
  meta.dataset_ids = {"visA", "visB"};
  REQUIRE(head_for(meta, "visA") == 1);
  REQUIRE(head_for(meta, "visB") == 2);
  REQUIRE(head_for(meta, "other") == 1);
  meta.stage_kind = "pretrain";
  REQUIRE(head_for(meta, "visB") == 1);
}

TEST_CASE("cross-corpus table averages rows and columns") {
  const nn::ArchConfig arch = tiny_arch();
  nn::ModelParams p = nn::build_model(arch, 19);
  Rng wr(4);
  for (std::size_t i = 0; i < p.head1.weight.size(); ++i)
    p.head1.weight[i] = 0.3 * wr.normal();
  nn::CheckpointMeta meta = identity_meta();

  auto [base, unused] = data::synth_generate(tiny_synth(10), 3);
  (void)unused;
  const std::vector<int> preds = model_predictions(p, meta, base);

  // dataset 1: exactly 30 of 60 labels correct; dataset 2: 45 of 60
  data::Dataset d1 = base, d2 = base;
  for (std::size_t i = 0; i < base.size(); ++i) {
    d1.samples[i].label = i < 30 ? preds[i] : (preds[i] + 1) % 6;
    d2.samples[i].label = i < 45 ? preds[i] : (preds[i] + 1) % 6;
    d1.samples[i].group_id = d2.samples[i].group_id = "s" + std::to_string(i);
  }
  d1.id = "d1";
  d2.id = "d2";

  CrossCorpusTable t = cross_corpus_table({{"model", &p, &meta, 1}},
                                          {{"d1", &d1}, {"d2", &d2}});
  REQUIRE(t.cells[0][0].accuracy == 0.5);
  REQUIRE(t.cells[0][1].accuracy == 0.75);
  REQUIRE(t.row_avg[0] == (0.5 + 0.75) / 2.0);
  REQUIRE(t.overall_avg == t.row_avg[0]);
  REQUIRE(t.col_avg[0] == 0.5);

  const std::string rendered = format_table(t);
  REQUIRE(rendered.find("Avg.") != std::string::npos);
  REQUIRE(rendered.find("0.62") != std::string::npos);  // 0.625 row average
  const std::string csv = table_csv(t);
  REQUIRE(csv.find("model,d1,") != std::string::npos);

  SECTION("single model and dataset: average equals the cell") {
    CrossCorpusTable one = cross_corpus_table({{"model", &p, &meta, 1}},
                                              {{"d1", &d1}});
    REQUIRE(one.row_avg[0] == one.cells[0][0].accuracy);
    REQUIRE(one.overall_avg == one.cells[0][0].accuracy);
  }
}

TEST_CASE("table averaging matches the published convention") {
  // cells 0.66 and 0.94 average to 0.80
  REQUIRE(std::abs((0.66 + 0.94) / 2.0 - 0.80) < 1e-15);
}

TEST_CASE("k-fold protocol reports per-resampling accuracies") {
  const nn::ArchConfig arch = tiny_arch();
  auto [a, unused] = data::synth_generate(tiny_synth(10), 6);
  (void)unused;

  train::StageSpec tmpl;
  tmpl.kind = train::StageKind::kPretrain;
  tmpl.datasets = {a.id};
  tmpl.lr = 2e-3;
  tmpl.iterations = 60;
  tmpl.batch = 6;
  tmpl.seed = 5;

  KFoldReport rep = run_kfold_protocol(arch, tmpl, a, 5, 0, 3, 77);
  REQUIRE(rep.accuracies.size() == 3);
  for (double acc : rep.accuracies) {
    REQUIRE(acc >= 0.0);
    REQUIRE(acc <= 1.0);
  }
  double mean = 0.0;
  for (double acc : rep.accuracies) mean += acc;
  mean /= 3.0;
  REQUIRE(std::abs(rep.mean - mean) < 1e-15);
  REQUIRE(rep.variance >= 0.0);

  REQUIRE_THROWS_AS(run_kfold_protocol(arch, tmpl, a, 5, 7, 2, 1), ConfigError);
}
