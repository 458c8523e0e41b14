#include <catch2/catch_amalgamated.hpp>
#include <set>

#include "emocross/gradcheck.hpp"
#include "emocross/model.hpp"

using namespace emocross;
using namespace emocross::nn;

namespace {

// Tiny configuration for gradient-level tests: 16x16 inputs pool down to 1x1.
ArchConfig tiny_arch(double dropout = 0.0) {
  ArchConfig a;
  a.input_height = 16;
  a.input_width = 16;
  a.conv_filters = {2, 2, 4, 4};
  a.fc_dims = {12, 10, 8, 6};
  a.dropout_rate = dropout;
  return a;
}

Tensor random_input(const ArchConfig& a, std::size_t n, Rng& rng) {
  Tensor x(Shape{n, a.input_channels, a.input_height, a.input_width});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("build_model is bit-reproducible per seed") {
  const ArchConfig arch = desk_arch();
  ModelParams a = build_model(arch, 7);
  ModelParams b = build_model(arch, 7);
  ModelParams c = build_model(arch, 8);
  bool identical = true;
  for (std::size_t i = 0; i < a.extractor.size(); ++i) {
    if (max_abs_diff(a.extractor[i].value, b.extractor[i].value) != 0.0)
      identical = false;
  }
  REQUIRE(identical);
  REQUIRE(max_abs_diff(a.head1.weight, b.head1.weight) == 0.0);
  REQUIRE(max_abs_diff(a.conv_weight(0), c.conv_weight(0)) > 0.0);
}

TEST_CASE("build_model weight spread tracks sqrt(2/fan_in)") {
  ArchConfig arch;
  arch.conv_filters = {32, 64, 64, 64};
  arch.fc_dims = {64, 32, 16, 6};
  ModelParams p = build_model(arch, 3);
  std::size_t fan_in = arch.input_channels * 9;
  for (std::size_t k = 0; k < 4; ++k) {
    const Tensor& w = p.conv_weight(k);
    double sumsq = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      sum += w[i];
      sumsq += w[i] * w[i];
    }
    const double mean = sum / static_cast<double>(w.size());
    const double std = std::sqrt(sumsq / static_cast<double>(w.size()) - mean * mean);
    const double target = std::sqrt(2.0 / static_cast<double>(fan_in));
    REQUIRE(std > 0.9 * target);
    REQUIRE(std < 1.1 * target);
    fan_in = arch.conv_filters[k] * 9;
  }
  // biases start at zero, GN affine at identity
  REQUIRE(p.conv_bias(1).abs_max() == 0.0);
  REQUIRE(p.gn_beta(2).abs_max() == 0.0);
  REQUIRE(p.gn_gamma(2).sum() == static_cast<double>(p.gn_gamma(2).size()));
}

TEST_CASE("parameter partition is exact and disjoint") {
  ModelParams p = build_model(tiny_arch(), 1);
  std::set<const Tensor*> seen;
  std::size_t total = 0;
  std::size_t match_tensors = 0;
  p.for_each_param([&](ParamGroup g, const std::string& name, const Tensor& t) {
    REQUIRE(!name.empty());
    REQUIRE(seen.insert(&t).second);  // each tensor exactly once
    total += t.size();
    if (g == ParamGroup::kMatch) ++match_tensors;
  });
  REQUIRE(seen.size() == p.tensor_count());
  REQUIRE(total == p.total_parameter_count());
  REQUIRE(match_tensors == 0);  // parameter-free matching head by default
}

TEST_CASE("full-size parameter count is the regression constant") {
  ModelParams p = build_model(paper_arch(), 0);
  REQUIRE(p.total_parameter_count() == 5817900u);
}

TEST_CASE("arch validation names bad fields") {
  ArchConfig a = desk_arch();
  a.input_height = 20;
  REQUIRE_THROWS_AS(a.validate(), ConfigError);

  ArchConfig b = desk_arch();
  b.conv_filters = {48, 48, 48, 48};  // 48 % 32 != 0
  REQUIRE_THROWS_AS(b.validate(), ConfigError);

  ArchConfig c = desk_arch();
  c.dropout_rate = 1.0;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward_features output shape and determinism") {
  const ArchConfig arch = tiny_arch();
  ModelParams p = build_model(arch, 5);
  Rng rng(11);
  Tensor x = random_input(arch, 3, rng);
  Tensor f1 = forward_features(x, p, Mode::kEval);
  Tensor f2 = forward_features(x, p, Mode::kEval);
  REQUIRE(f1.shape() == Shape{3, 8});
  REQUIRE(max_abs_diff(f1, f2) == 0.0);
  REQUIRE(f1.all_finite());

  Tensor bad(Shape{1, 3, 8, 8});
  REQUIRE_THROWS_AS(forward_features(bad, p, Mode::kEval), DimensionError);
}

TEST_CASE("train mode with dropout requires an rng") {
  ModelParams p = build_model(tiny_arch(0.5), 5);
  Rng rng(2);
  Tensor x = random_input(p.arch, 1, rng);
  REQUIRE_THROWS_AS(forward_features(x, p, Mode::kTrain), ContractError);
  Rng drop(3);
  REQUIRE_NOTHROW(forward_features(x, p, Mode::kTrain, &drop));
}

TEST_CASE("per-sample features are invariant to batch composition") {
  const ArchConfig arch = tiny_arch();
  ModelParams p = build_model(arch, 9);
  Rng rng(13);
  Tensor pair = random_input(arch, 2, rng);
  Tensor f_pair = forward_features(pair, p, Mode::kEval);

  const std::size_t per = arch.input_channels * arch.input_height * arch.input_width;
  Tensor first(Shape{1, arch.input_channels, arch.input_height, arch.input_width});
  for (std::size_t i = 0; i < per; ++i) first[i] = pair[i];
  Tensor f_first = forward_features(first, p, Mode::kEval);

  double worst = 0.0;
  for (std::size_t d = 0; d < 8; ++d)
    worst = std::max(worst, std::abs(f_pair(0, d) - f_first(0, d)));
  REQUIRE(worst < 1e-10);
}

TEST_CASE("classify rows behave like softmax of an affine head") {
  const ArchConfig arch = tiny_arch();
  ModelParams p = build_model(arch, 21);
  Rng rng(1);
  Tensor f(Shape{4, 8});
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.normal();

  SECTION("zero head weights give uniform rows") {
    p.head2.weight.fill(0.0);
    p.head2.bias.fill(0.0);
    Tensor probs = classify(f, 2, p);
    for (std::size_t i = 0; i < probs.size(); ++i)
      REQUIRE(std::abs(probs[i] - 1.0 / 6.0) < 1e-15);
  }
  SECTION("rows sum to one and argmax matches the logits") {
    Tensor probs = classify(f, 1, p);
    Tensor logits = fc_forward(f, p.head1.weight, p.head1.bias);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      std::size_t amax_p = 0, amax_z = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        s += probs(i, j);
        if (probs(i, j) > probs(i, amax_p)) amax_p = j;
        if (logits(i, j) > logits(i, amax_z)) amax_z = j;
      }
      REQUIRE(std::abs(s - 1.0) <= 1e-12);
      REQUIRE(amax_p == amax_z);
    }
  }
  SECTION("invalid head index") {
    REQUIRE_THROWS_AS(classify(f, 3, p), ContractError);
  }
}

TEST_CASE("end-to-end extractor gradient matches finite differences") {
  const ArchConfig arch = tiny_arch();  // dropout off: deterministic objective
  ModelParams p = build_model(arch, 17);
  Rng rng(19);
  const Tensor x = random_input(arch, 2, rng);

  // L = mean of all feature entries
  auto loss_of = [&](const ModelParams& m) {
    const Tensor f = forward_features(x, m, Mode::kEval);
    return f.sum() / static_cast<double>(f.size());
  };

  FeatureCache cache = forward_features_cached(x, p, Mode::kEval);
  const Tensor& f = cache.features();
  Tensor d_f = Tensor::full(f.shape(), 1.0 / static_cast<double>(f.size()));
  ExtractorGrads grads = ExtractorGrads::zeros_like(p);
  backward_features(cache, p, d_f, grads);

  // probe the first conv weights and a mid fc weight
  for (std::size_t probe : {std::size_t{0}, std::size_t{16}}) {
    auto fn = [&](const Tensor& t) {
      ModelParams m = p;
      m.extractor[probe].value = t;
      return loss_of(m);
    };
    const double err =
        finite_diff_check(fn, p.extractor[probe].value, grads.grads[probe], 1e-3);
    INFO("probe tensor " << p.extractor[probe].name);
    REQUIRE(err < 1e-4);
  }
}
