#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "emocross/layers.hpp"
#include "emocross/losses.hpp"
#include "emocross/rng.hpp"
#include "emocross/tensor.hpp"

namespace emocross::nn {

// Structural constants of the network. The defaults are the full-size
// configuration: four conv blocks (conv -> GN -> LReLU -> dropout -> 2x2
// maxpool) followed by three fully-connected feature layers and a 6-way
// affine head per classifier.
struct ArchConfig {
  std::size_t input_channels = 3;
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::array<std::size_t, 4> conv_filters{64, 128, 256, 512};
  std::array<std::size_t, 4> fc_dims{512, 128, 32, 6};  // last = classes
  std::size_t gn_group_cap = 32;
  double gn_eps = 1e-5;
  double lrelu_slope = 0.01;
  double dropout_rate = 0.5;
  double margin = 1.0;
  bool match_projection = false;
  std::size_t match_dim = 0;

  std::size_t classes() const { return fc_dims[3]; }
  std::size_t feature_dim() const { return fc_dims[2]; }
  std::size_t conv_out_height() const { return input_height / 16; }
  std::size_t conv_out_width() const { return input_width / 16; }
  std::size_t flatten_dim() const {
    return conv_out_height() * conv_out_width() * conv_filters[3];
  }
  std::size_t gn_groups(std::size_t channels) const {
    return std::min(gn_group_cap, channels);
  }

  void validate() const {
    if (input_channels == 0) throw ConfigError("arch: input_channels must be positive");
    if (input_height < 16 || input_height % 16 != 0 || input_width < 16 ||
        input_width % 16 != 0) {
      throw ConfigError("arch: input_height/input_width must be multiples of 16 "
                        "(four 2x2 pooling stages), got " +
                        std::to_string(input_height) + "x" + std::to_string(input_width));
    }
    for (std::size_t f : conv_filters) {
      if (f == 0) throw ConfigError("arch: conv_filters entries must be positive");
      const std::size_t g = gn_groups(f);
      if (g == 0 || f % g != 0) {
        throw ConfigError("arch: gn_group_cap " + std::to_string(gn_group_cap) +
                          " does not divide " + std::to_string(f) + " channels");
      }
    }
    for (std::size_t d : fc_dims) {
      if (d == 0) throw ConfigError("arch: fc_dims entries must be positive");
    }
    if (!(gn_eps > 0.0)) throw ConfigError("arch: gn_eps must be positive");
    if (!(lrelu_slope > 0.0 && lrelu_slope < 1.0)) {
      throw ConfigError("arch: lrelu_slope must lie in (0,1)");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ConfigError("arch: dropout_rate must lie in [0,1)");
    }
    if (!(margin > 0.0)) throw ConfigError("arch: margin must be positive");
    if (match_projection && match_dim == 0) {
      throw ConfigError("arch: match_dim must be positive when match_projection is on");
    }
  }

  bool same_structure(const ArchConfig& o) const {
    return input_channels == o.input_channels && input_height == o.input_height &&
           input_width == o.input_width && conv_filters == o.conv_filters &&
           fc_dims == o.fc_dims && gn_group_cap == o.gn_group_cap &&
           match_projection == o.match_projection && match_dim == o.match_dim;
  }
};

/// Small configuration for CPU-scale runs and tests.
inline ArchConfig desk_arch() {
  ArchConfig a;
  a.conv_filters = {4, 8, 16, 32};
  a.fc_dims = {256, 256, 256, 6};
  return a;
}

inline ArchConfig paper_arch() { return ArchConfig{}; }

enum class ParamGroup { kExtractor, kClass1, kClass2, kMatch };

struct NamedTensor {
  std::string name;
  Tensor value;
};

// The partitioned parameter set: feature extractor, the two classifier
// heads, and the matching head. The partition is exact and disjoint; every
// trainable tensor appears exactly once in the for_each_param order.
struct ModelParams {
  ArchConfig arch;
  std::vector<NamedTensor> extractor;  // 4x(conv w,b + gn gamma,beta) + 3x(fc w,b)
  ClassifierHead head1, head2;
  MatchHead match;

  static constexpr std::size_t kExtractorTensors = 22;

  Tensor& conv_weight(std::size_t k) { return extractor[4 * k].value; }
  Tensor& conv_bias(std::size_t k) { return extractor[4 * k + 1].value; }
  Tensor& gn_gamma(std::size_t k) { return extractor[4 * k + 2].value; }
  Tensor& gn_beta(std::size_t k) { return extractor[4 * k + 3].value; }
  Tensor& fc_weight(std::size_t j) { return extractor[16 + 2 * j].value; }
  Tensor& fc_bias(std::size_t j) { return extractor[16 + 2 * j + 1].value; }
  const Tensor& conv_weight(std::size_t k) const { return extractor[4 * k].value; }
  const Tensor& conv_bias(std::size_t k) const { return extractor[4 * k + 1].value; }
  const Tensor& gn_gamma(std::size_t k) const { return extractor[4 * k + 2].value; }
  const Tensor& gn_beta(std::size_t k) const { return extractor[4 * k + 3].value; }
  const Tensor& fc_weight(std::size_t j) const { return extractor[16 + 2 * j].value; }
  const Tensor& fc_bias(std::size_t j) const { return extractor[16 + 2 * j + 1].value; }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& nt : extractor) fn(ParamGroup::kExtractor, nt.name, nt.value);
    fn(ParamGroup::kClass1, std::string("head1.weight"), head1.weight);
    fn(ParamGroup::kClass1, std::string("head1.bias"), head1.bias);
    fn(ParamGroup::kClass2, std::string("head2.weight"), head2.weight);
    fn(ParamGroup::kClass2, std::string("head2.bias"), head2.bias);
    if (match.has_projection) {
      fn(ParamGroup::kMatch, std::string("match.weight"), match.weight);
      fn(ParamGroup::kMatch, std::string("match.bias"), match.bias);
    }
  }
  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    for (const auto& nt : extractor) fn(ParamGroup::kExtractor, nt.name, nt.value);
    fn(ParamGroup::kClass1, std::string("head1.weight"), head1.weight);
    fn(ParamGroup::kClass1, std::string("head1.bias"), head1.bias);
    fn(ParamGroup::kClass2, std::string("head2.weight"), head2.weight);
    fn(ParamGroup::kClass2, std::string("head2.bias"), head2.bias);
    if (match.has_projection) {
      fn(ParamGroup::kMatch, std::string("match.weight"), match.weight);
      fn(ParamGroup::kMatch, std::string("match.bias"), match.bias);
    }
  }

  std::size_t tensor_count() const {
    return kExtractorTensors + 4 + (match.has_projection ? 2 : 0);
  }

  std::size_t total_parameter_count() const {
    std::size_t n = 0;
    for_each_param([&](ParamGroup, const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  /// True when a conv-block tensor index; these freeze under fc_only.
  static bool is_conv_block_index(std::size_t flat_index) { return flat_index < 16; }
};

namespace detail {
// Mean correction so samples truncated to |z|<=2 keep the requested stddev.
constexpr double kTruncatedStdCorrection = 0.87962566103423978;

inline void fill_variance_scaled(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in)) /
                     kTruncatedStdCorrection;
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std * rng.truncated_normal();
}
}  // namespace detail

// Builds a model with variance-scaling (truncated normal, std = sqrt(2/fan_in))
// weights, zero biases, and unit/zero GN affine parameters. Bit-reproducible
// for a given seed.
inline ModelParams build_model(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams p;
  p.arch = arch;
  Rng rng(seed);

  std::size_t in_ch = arch.input_channels;
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t f = arch.conv_filters[k];
    const std::string tag = "conv" + std::to_string(k + 1);
    NamedTensor w{tag + ".weight", Tensor({f, in_ch, 3, 3})};
    detail::fill_variance_scaled(w.value, in_ch * 9, rng);
    p.extractor.push_back(std::move(w));
    p.extractor.push_back({tag + ".bias", Tensor({f})});
    p.extractor.push_back({"gn" + std::to_string(k + 1) + ".gamma", Tensor::full({f}, 1.0)});
    p.extractor.push_back({"gn" + std::to_string(k + 1) + ".beta", Tensor({f})});
    in_ch = f;
  }
  std::size_t d_in = arch.flatten_dim();
  for (std::size_t j = 0; j < 3; ++j) {
    const std::size_t d_out = arch.fc_dims[j];
    const std::string tag = "fc" + std::to_string(j + 1);
    NamedTensor w{tag + ".weight", Tensor({d_out, d_in})};
    detail::fill_variance_scaled(w.value, d_in, rng);
    p.extractor.push_back(std::move(w));
    p.extractor.push_back({tag + ".bias", Tensor({d_out})});
    d_in = d_out;
  }

  // Classifier heads start at zero so a fresh model predicts exactly the
  // uniform distribution (initial loss ln C); the extractor carries all the
  // variance-scaled randomness.
  const std::size_t feat = arch.feature_dim();
  const std::size_t classes = arch.classes();
  p.head1.weight = Tensor({classes, feat});
  p.head1.bias = Tensor({classes});
  p.head2.weight = Tensor({classes, feat});
  p.head2.bias = Tensor({classes});

  p.match.margin = arch.margin;
  p.match.has_projection = arch.match_projection;
  if (arch.match_projection) {
    p.match.weight = Tensor({arch.match_dim, feat});
    detail::fill_variance_scaled(p.match.weight, feat, rng);
    p.match.bias = Tensor({arch.match_dim});
  }
  return p;
}

// ---------------------------------------------------------------------------
// forward / backward through the feature extractor
// ---------------------------------------------------------------------------

struct BlockCache {
  Tensor conv_out, gn_out, act_out, drop_mask, drop_out, pool_out;
};

struct FeatureCache {
  Tensor input;
  std::array<BlockCache, 4> blocks;
  Tensor flat;
  std::array<Tensor, 3> fc_act;
  const Tensor& features() const { return fc_act[2]; }
};

inline void check_input_shape(const Tensor& x, const ArchConfig& arch) {
  if (x.ndim() != 4 || x.dim(1) != arch.input_channels ||
      x.dim(2) != arch.input_height || x.dim(3) != arch.input_width) {
    throw DimensionError("forward_features: expected input [N," +
                         std::to_string(arch.input_channels) + "," +
                         std::to_string(arch.input_height) + "," +
                         std::to_string(arch.input_width) + "], got " +
                         shape_str(x.shape()));
  }
}

// Runs [conv -> GN -> LReLU -> dropout -> maxpool] x4, flatten, then three
// FC+LReLU layers, keeping every intermediate needed for the backward pass.
inline FeatureCache forward_features_cached(const Tensor& x, const ModelParams& p,
                                            Mode mode, Rng* rng = nullptr) {
  check_input_shape(x, p.arch);
  if (mode == Mode::kTrain && p.arch.dropout_rate > 0.0 && rng == nullptr) {
    throw ContractError("forward_features: train mode with dropout needs an rng");
  }
  FeatureCache c;
  c.input = x;
  const Tensor* cur = &c.input;
  for (std::size_t k = 0; k < 4; ++k) {
    BlockCache& b = c.blocks[k];
    b.conv_out = conv2d_forward(*cur, p.conv_weight(k), p.conv_bias(k));
    b.gn_out = group_norm_forward(b.conv_out, p.gn_gamma(k), p.gn_beta(k),
                                  p.arch.gn_groups(p.arch.conv_filters[k]),
                                  p.arch.gn_eps);
    b.act_out = leaky_relu_forward(b.gn_out, p.arch.lrelu_slope);
    if (mode == Mode::kTrain && p.arch.dropout_rate > 0.0) {
      DropoutResult d = dropout(b.act_out, p.arch.dropout_rate, mode, *rng);
      b.drop_mask = std::move(d.mask);
      b.drop_out = std::move(d.output);
    } else {
      b.drop_out = b.act_out;
    }
    b.pool_out = maxpool2_forward(b.drop_out);
    cur = &b.pool_out;
  }
  c.flat = cur->reshaped({cur->dim(0), p.arch.flatten_dim()});
  const Tensor* fin = &c.flat;
  for (std::size_t j = 0; j < 3; ++j) {
    Tensor lin = fc_forward(*fin, p.fc_weight(j), p.fc_bias(j));
    c.fc_act[j] = leaky_relu_forward(lin, p.arch.lrelu_slope);
    fin = &c.fc_act[j];
  }
  return c;
}

/// Features only; eval mode is deterministic and needs no rng.
inline Tensor forward_features(const Tensor& x, const ModelParams& p, Mode mode,
                               Rng* rng = nullptr) {
  return forward_features_cached(x, p, mode, rng).features();
}

/// Class probabilities from features through head 1 or 2.
inline Tensor classify(const Tensor& f, int head, const ModelParams& p) {
  if (head != 1 && head != 2) {
    throw ContractError("classify: head must be 1 or 2, got " + std::to_string(head));
  }
  const ClassifierHead& h = head == 1 ? p.head1 : p.head2;
  return softmax(fc_forward(f, h.weight, h.bias));
}

// Extractor gradients aligned with the extractor tensor order.
struct ExtractorGrads {
  std::vector<Tensor> grads;  // size ModelParams::kExtractorTensors

  static ExtractorGrads zeros_like(const ModelParams& p) {
    ExtractorGrads g;
    g.grads.reserve(p.extractor.size());
    for (const auto& nt : p.extractor) g.grads.emplace_back(nt.value.shape());
    return g;
  }
};

// Backpropagates d(features) through the cached forward pass, accumulating
// (+=) into out. Dropout replays the recorded masks exactly.
inline void backward_features(const FeatureCache& c, const ModelParams& p,
                              const Tensor& d_features, ExtractorGrads& out) {
  check_same_shape(d_features, c.fc_act[2], "backward_features");
  Tensor g = d_features;
  for (int j = 2; j >= 0; --j) {
    const Tensor& fin = j == 0 ? c.flat : c.fc_act[j - 1];
    Tensor d_lin = leaky_relu_backward_from(c.fc_act[j], g, p.arch.lrelu_slope);
    LayerGrads fg = fc_backward(fin, p.fc_weight(j), d_lin);
    add_scaled(out.grads[16 + 2 * j], fg.d_params[0], 1.0);
    add_scaled(out.grads[16 + 2 * j + 1], fg.d_params[1], 1.0);
    g = std::move(fg.d_input);
  }
  const std::size_t n = c.input.dim(0);
  g = g.reshaped({n, p.arch.conv_filters[3], p.arch.conv_out_height(),
                  p.arch.conv_out_width()});
  for (int k = 3; k >= 0; --k) {
    const BlockCache& b = c.blocks[k];
    const Tensor& conv_in = k == 0 ? c.input : c.blocks[k - 1].pool_out;
    Tensor d_drop = maxpool2_backward(b.drop_out, g);
    if (b.drop_mask.defined()) {
      for (std::size_t i = 0; i < d_drop.size(); ++i) d_drop[i] *= b.drop_mask[i];
    }
    Tensor d_gn = leaky_relu_backward_from(b.act_out, d_drop, p.arch.lrelu_slope);
    LayerGrads gn = group_norm_backward(b.conv_out, p.gn_gamma(k),
                                        p.arch.gn_groups(p.arch.conv_filters[k]),
                                        p.arch.gn_eps, d_gn);
    add_scaled(out.grads[4 * k + 2], gn.d_params[0], 1.0);
    add_scaled(out.grads[4 * k + 3], gn.d_params[1], 1.0);
    LayerGrads cv = conv2d_backward(conv_in, p.conv_weight(k), gn.d_input);
    add_scaled(out.grads[4 * k], cv.d_params[0], 1.0);
    add_scaled(out.grads[4 * k + 1], cv.d_params[1], 1.0);
    if (k > 0) g = std::move(cv.d_input);
  }
}

}  // namespace emocross::nn
