#pragma once

#include <string>
#include <vector>

#include "emocross/layers.hpp"
#include "emocross/tensor.hpp"

namespace emocross::nn {

// An affine classifier head mapping features [D] to class logits [C].
struct ClassifierHead {
  Tensor weight;  // [C,D]
  Tensor bias;    // [C]
};

// Matching-head parameters for the contrastive signal. The margin applies to
// the squared distance. With no projection the head is parameter-free and its
// update in the joint loop is a no-op.
struct MatchHead {
  double margin = 1.0;
  bool has_projection = false;
  Tensor weight;  // [P,D] when has_projection
  Tensor bias;    // [P]
};

struct LossOutput {
  double value = 0.0;
  Tensor d_feature;              // gradient w.r.t. the input features
  std::vector<Tensor> d_head;    // gradients w.r.t. head parameters
};

struct ContrastiveOutput {
  double value = 0.0;
  Tensor d_fi;
  Tensor d_fj;
  std::vector<Tensor> d_head;    // empty for the parameter-free head
};

// Mean cross-entropy of softmax(head(f)) against integer labels, with exact
// gradients for the features and the head.
inline LossOutput cross_entropy(const Tensor& f, const std::vector<int>& labels,
                                const ClassifierHead& head) {
  if (f.ndim() != 2) {
    throw DimensionError("cross_entropy: features must be [N,D], got " +
                         shape_str(f.shape()));
  }
  const std::size_t n = f.dim(0);
  const std::size_t c = head.weight.dim(0);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " samples");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) +
                      " out of range [0," + std::to_string(c) + ") at sample " +
                      std::to_string(i));
    }
  }
  const Tensor logits = fc_forward(f, head.weight, head.bias);
  const Tensor p = softmax(logits);

  LossOutput out;
  Tensor d_logits(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t li = static_cast<std::size_t>(labels[i]);
    out.value -= std::log(p(i, li));
    for (std::size_t j = 0; j < c; ++j) {
      d_logits(i, j) = (p(i, j) - (j == li ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.value *= inv_n;

  LayerGrads g = fc_backward(f, head.weight, d_logits);
  out.d_feature = std::move(g.d_input);
  out.d_head = std::move(g.d_params);
  return out;
}

// Contrastive matching loss over one feature pair (Eq. 2 shape: the margin
// clamps the squared L2 distance). Gradients vanish in the clamped region.
inline ContrastiveOutput contrastive(const Tensor& f_i, const Tensor& f_j,
                                     int y_ij, const MatchHead& head) {
  check_same_shape(f_i, f_j, "contrastive");
  if (y_ij != 0 && y_ij != 1) {
    throw DataError("contrastive: pair label must be 0 or 1, got " +
                    std::to_string(y_ij));
  }
  const bool proj = head.has_projection;
  const Tensor gi = proj ? fc_forward(f_i.reshaped({1, f_i.size()}), head.weight,
                                      head.bias)
                         : f_i;
  const Tensor gj = proj ? fc_forward(f_j.reshaped({1, f_j.size()}), head.weight,
                                      head.bias)
                         : f_j;

  Tensor diff(Shape{gi.size()});
  double d2 = 0.0;
  for (std::size_t k = 0; k < gi.size(); ++k) {
    diff[k] = gi[k] - gj[k];
    d2 += diff[k] * diff[k];
  }

  ContrastiveOutput out;
  Tensor dgi(diff.shape());
  Tensor dgj(diff.shape());
  if (y_ij == 1) {
    out.value = 0.5 * d2;
    dgi = diff;
    for (std::size_t k = 0; k < diff.size(); ++k) dgj[k] = -diff[k];
  } else if (d2 < head.margin) {
    out.value = 0.5 * (head.margin - d2);
    for (std::size_t k = 0; k < diff.size(); ++k) {
      dgi[k] = -diff[k];
      dgj[k] = diff[k];
    }
  } else {
    out.value = 0.0;  // clamped: gradients stay zero
  }

  if (!proj) {
    out.d_fi = std::move(dgi);
    out.d_fj = std::move(dgj);
    return out;
  }
  LayerGrads bi = fc_backward(f_i.reshaped({1, f_i.size()}), head.weight,
                              dgi.reshaped({1, dgi.size()}));
  LayerGrads bj = fc_backward(f_j.reshaped({1, f_j.size()}), head.weight,
                              dgj.reshaped({1, dgj.size()}));
  out.d_fi = bi.d_input.reshaped(f_i.shape());
  out.d_fj = bj.d_input.reshaped(f_j.shape());
  out.d_head.resize(2);
  out.d_head[0] = bi.d_params[0];
  add_scaled(out.d_head[0], bj.d_params[0], 1.0);
  out.d_head[1] = bi.d_params[1];
  add_scaled(out.d_head[1], bj.d_params[1], 1.0);
  return out;
}

/// 1 iff the two class labels match.
inline int pair_label(int l_i, int l_j) { return l_i == l_j ? 1 : 0; }

/// Weighted combination of the two classification losses and the matching loss.
inline double joint_loss(double l1, double l2, double lc, double lambda1,
                         double lambda2, double lambda3) {
  return lambda1 * l1 + lambda2 * l2 + lambda3 * lc;
}

}  // namespace emocross::nn
