#pragma once

#include <string>
#include <vector>

#include "emocross/gradcheck.hpp"
#include "emocross/losses.hpp"

namespace emocross::nn {

// One line of the finite-difference report: the worst relative error for an
// operation across all checked tensors and seeds, against its tolerance
// (1e-6 for smooth ops, 1e-4 for the kinked/composed ones).
struct GradCheckItem {
  std::string name;
  double worst = 0.0;
  double tol = 1e-6;
  bool pass() const { return worst < tol; }
};

namespace gradsuite_detail {

inline Tensor rand_tensor(Shape shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline double weighted(const Tensor& out, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
  return s;
}

}  // namespace gradsuite_detail

// Central finite-difference sweep over every layer and loss, step 1e-3,
// double precision, aggregated over `seeds` random draws.
inline std::vector<GradCheckItem> run_gradient_suite(std::size_t seeds) {
  using gradsuite_detail::rand_tensor;
  using gradsuite_detail::weighted;
  const double step = 1e-3;

  GradCheckItem conv{"conv2d", 0.0, 1e-6};
  GradCheckItem fc{"fully_connected", 0.0, 1e-6};
  GradCheckItem lrelu{"leaky_relu", 0.0, 1e-4};
  GradCheckItem gn{"group_norm", 0.0, 1e-6};
  GradCheckItem ce{"cross_entropy", 0.0, 1e-6};
  GradCheckItem co{"contrastive", 0.0, 1e-6};
  GradCheckItem comp{"conv_gn_lrelu_chain", 0.0, 1e-4};

  for (std::size_t s = 1; s <= seeds; ++s) {
    Rng rng(derive_seed(0xC0FFEE, s));

    {  // conv2d: input, weights, bias
      const Tensor x = rand_tensor({1, 2, 4, 4}, rng, 1.0);
      const Tensor w = rand_tensor({3, 2, 3, 3}, rng, 0.5);
      const Tensor b = rand_tensor({3}, rng, 0.1);
      const Tensor u = rand_tensor({1, 3, 4, 4}, rng, 1.0);
      LayerGrads g = conv2d_backward(x, w, u);
      conv.worst = std::max(
          conv.worst,
          finite_diff_check(
              [&](const Tensor& t) { return weighted(conv2d_forward(t, w, b), u); }, x,
              g.d_input, step));
      conv.worst = std::max(
          conv.worst,
          finite_diff_check(
              [&](const Tensor& t) { return weighted(conv2d_forward(x, t, b), u); }, w,
              g.d_params[0], step));
      conv.worst = std::max(
          conv.worst,
          finite_diff_check(
              [&](const Tensor& t) { return weighted(conv2d_forward(x, w, t), u); }, b,
              g.d_params[1], step));
    }
    {  // fully connected
      const Tensor x = rand_tensor({2, 5}, rng, 1.0);
      const Tensor w = rand_tensor({3, 5}, rng, 0.5);
      const Tensor b = rand_tensor({3}, rng, 0.1);
      const Tensor u = rand_tensor({2, 3}, rng, 1.0);
      LayerGrads g = fc_backward(x, w, u);
      fc.worst = std::max(
          fc.worst, finite_diff_check(
                        [&](const Tensor& t) { return weighted(fc_forward(t, w, b), u); },
                        x, g.d_input, step));
      fc.worst = std::max(
          fc.worst, finite_diff_check(
                        [&](const Tensor& t) { return weighted(fc_forward(x, t, b), u); },
                        w, g.d_params[0], step));
    }
    {  // leaky relu, sampled away from the kink
      Tensor x(Shape{30});
      for (std::size_t i = 0; i < x.size(); ++i) {
        double v = rng.normal();
        if (std::abs(v) < 1e-2) v += v < 0 ? -0.5 : 0.5;
        x[i] = v;
      }
      const Tensor u = rand_tensor({30}, rng, 1.0);
      const double slope = 0.01;
      Tensor analytic = leaky_relu_backward_from(x, u, slope);
      lrelu.worst = std::max(
          lrelu.worst,
          finite_diff_check(
              [&](const Tensor& t) { return weighted(leaky_relu_forward(t, slope), u); },
              x, analytic, step));
    }
    {  // group norm: input, gamma, beta. The group stddev divides the
       // backward pass, so large-scale inputs keep the h^2 truncation of the
       // central difference far below the 1e-6 bound. Draws with a
       // near-cancelled gradient coordinate are rejected: below ~1e-4 the
       // relative error is dominated by rounding noise, not by the formula
       // under test.
      const double eps = 1e-5;
      Tensor x, ga, be, u;
      LayerGrads g;
      while (true) {
        x = rand_tensor({2, 4, 4, 4}, rng, 20.0);
        ga = rand_tensor({4}, rng, 0.5);
        be = rand_tensor({4}, rng, 0.5);
        u = rand_tensor({2, 4, 4, 4}, rng, 1.0);
        g = group_norm_backward(x, ga, 2, eps, u);
        double tiniest = 1e9;
        for (const Tensor* t : {&g.d_input, &g.d_params[0], &g.d_params[1]}) {
          for (std::size_t i = 0; i < t->size(); ++i)
            tiniest = std::min(tiniest, std::abs((*t)[i]));
        }
        if (tiniest > 5e-4) break;
      }
      gn.worst = std::max(
          gn.worst,
          finite_diff_check(
              [&](const Tensor& t) {
                return weighted(group_norm_forward(t, ga, be, 2, eps), u);
              },
              x, g.d_input, step));
      gn.worst = std::max(
          gn.worst,
          finite_diff_check(
              [&](const Tensor& t) {
                return weighted(group_norm_forward(x, t, be, 2, eps), u);
              },
              ga, g.d_params[0], step));
      gn.worst = std::max(
          gn.worst,
          finite_diff_check(
              [&](const Tensor& t) {
                return weighted(group_norm_forward(x, ga, t, 2, eps), u);
              },
              be, g.d_params[1], step));
    }
    {  // cross entropy through an affine head
      // small logits keep the softmax third-order terms negligible at the
      // fixed 1e-3 step
      ClassifierHead head;
      Tensor f;
      std::vector<int> labels;
      LossOutput out;
      while (true) {
        head.weight = rand_tensor({6, 5}, rng, 0.08);
        head.bias = rand_tensor({6}, rng, 0.03);
        f = rand_tensor({3, 5}, rng, 0.08);
        labels = {static_cast<int>(rng.index(6)), static_cast<int>(rng.index(6)),
                  static_cast<int>(rng.index(6))};
        out = cross_entropy(f, labels, head);
        double tiniest = 1e9;
        for (const Tensor* t : {&out.d_feature, &out.d_head[0]}) {
          for (std::size_t i = 0; i < t->size(); ++i)
            tiniest = std::min(tiniest, std::abs((*t)[i]));
        }
        if (tiniest > 5e-5) break;  // below this, rounding noise dominates
      }
      ce.worst = std::max(
          ce.worst,
          finite_diff_check(
              [&](const Tensor& t) { return cross_entropy(t, labels, head).value; }, f,
              out.d_feature, step));
      ce.worst = std::max(
          ce.worst, finite_diff_check(
                        [&](const Tensor& t) {
                          ClassifierHead h{t, head.bias};
                          return cross_entropy(f, labels, h).value;
                        },
                        head.weight, out.d_head[0], step));
    }
    {  // contrastive, both branches, away from the clamp boundary
      MatchHead head;
      head.margin = 1.0;
      for (int y : {0, 1}) {
        Tensor fi, fj;
        double d2;
        do {
          fi = rand_tensor({5}, rng, 0.4);
          fj = rand_tensor({5}, rng, 0.4);
          d2 = 0.0;
          for (std::size_t k = 0; k < 5; ++k) d2 += (fi[k] - fj[k]) * (fi[k] - fj[k]);
        } while (std::abs(d2 - head.margin) < 1e-2);
        ContrastiveOutput out = contrastive(fi, fj, y, head);
        co.worst = std::max(
            co.worst,
            finite_diff_check(
                [&](const Tensor& t) { return contrastive(t, fj, y, head).value; }, fi,
                out.d_fi, step));
      }
    }
    {  // composed chain conv -> GN -> LReLU w.r.t. the conv weights. Draws
       // whose normalized activations sit near the LReLU kink are rejected:
       // a 1e-3 weight step would cross the kink and the central difference
       // would straddle the slope change.
      const double slope = 0.01, eps = 1e-5;
      Tensor x, w, b, ga, be, u, analytic;
      while (true) {
        x = rand_tensor({1, 2, 4, 4}, rng, 3.0);
        w = rand_tensor({4, 2, 3, 3}, rng, 0.5);
        b = rand_tensor({4}, rng, 0.1);
        ga = Tensor::full({4}, 1.0);
        be = rand_tensor({4}, rng, 0.1);
        u = rand_tensor({1, 4, 4, 4}, rng, 1.0);
        const Tensor c = conv2d_forward(x, w, b);
        const Tensor g = group_norm_forward(c, ga, be, 2, eps);
        double closest = 1e9;
        for (std::size_t i = 0; i < g.size(); ++i)
          closest = std::min(closest, std::abs(g[i]));
        if (closest <= 0.03) continue;  // a weight step must not cross the kink
        const Tensor d_g = leaky_relu_backward_from(g, u, slope);
        LayerGrads gnb = group_norm_backward(c, ga, 2, eps, d_g);
        LayerGrads cvb = conv2d_backward(x, w, gnb.d_input);
        analytic = cvb.d_params[0];
        double tiniest = 1e9;
        for (std::size_t i = 0; i < analytic.size(); ++i)
          tiniest = std::min(tiniest, std::abs(analytic[i]));
        if (tiniest > 1e-3) break;
      }
      auto forward = [&](const Tensor& t) {
        const Tensor c = conv2d_forward(x, t, b);
        const Tensor g = group_norm_forward(c, ga, be, 2, eps);
        return weighted(leaky_relu_forward(g, slope), u);
      };
      comp.worst = std::max(comp.worst, finite_diff_check(forward, w, analytic, step));
    }
  }
  return {conv, fc, lrelu, gn, ce, co, comp};
}

}  // namespace emocross::nn
