#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "emocross/parallel.hpp"
#include "emocross/rng.hpp"
#include "emocross/tensor.hpp"

namespace emocross::nn {

enum class Mode { kTrain, kEval };

// Gradients of one layer w.r.t. its input and parameters, for the scalar
// objective sum(upstream * output). d_params follows the layer's own
// parameter order (weights first, then bias / gamma then beta).
struct LayerGrads {
  Tensor d_input;
  std::vector<Tensor> d_params;
};

struct LayerResult {
  Tensor output;
  std::optional<LayerGrads> grads;
};

// ---------------------------------------------------------------------------
// conv2d: 3x3 kernel, stride 1, zero padding 1 (spatial size preserved)
// ---------------------------------------------------------------------------

inline void check_conv_shapes(const Tensor& input, const Tensor& weights,
                              const Tensor& bias) {
  if (input.ndim() != 4) {
    throw DimensionError("conv2d: input must be [N,C,H,W], got " +
                         shape_str(input.shape()));
  }
  if (weights.ndim() != 4 || weights.dim(2) != 3 || weights.dim(3) != 3) {
    throw DimensionError("conv2d: weights must be [F,C,3,3], got " +
                         shape_str(weights.shape()));
  }
  if (weights.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: channel axis mismatch, input axis 1 is " +
                         std::to_string(input.dim(1)) + " but weights axis 1 is " +
                         std::to_string(weights.dim(1)));
  }
  if (bias.ndim() != 1 || bias.dim(0) != weights.dim(0)) {
    throw DimensionError("conv2d: bias must be [F]=" + std::to_string(weights.dim(0)) +
                         ", got " + shape_str(bias.shape()));
  }
}

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                             const Tensor& bias) {
  check_conv_shapes(input, weights, bias);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3), f = weights.dim(0);
  Tensor out(Shape{n, f, h, w});
  parallel_for(n * f, 4, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t nf = lo; nf < hi; ++nf) {
      const std::size_t in = nf / f, fo = nf % f;
      double* orow0 = out.data() + (in * f + fo) * h * w;
      const double b = bias[fo];
      for (std::size_t i = 0; i < h * w; ++i) orow0[i] = b;
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* iplane = input.data() + (in * c + ic) * h * w;
        const double* k = weights.data() + (fo * c + ic) * 9;
        for (int dh = -1; dh <= 1; ++dh) {
          for (int dw = -1; dw <= 1; ++dw) {
            const double wv = k[(dh + 1) * 3 + (dw + 1)];
            const std::size_t y0 = dh < 0 ? 1 : 0;
            const std::size_t y1 = dh > 0 ? h - 1 : h;
            const std::size_t x0 = dw < 0 ? 1 : 0;
            const std::size_t x1 = dw > 0 ? w - 1 : w;
            for (std::size_t y = y0; y < y1; ++y) {
              const double* irow = iplane + (y + dh) * w + dw;
              double* orow = orow0 + y * w;
              for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
            }
          }
        }
      }
    }
  });
  return out;
}

inline LayerGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                                  const Tensor& upstream) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3), f = weights.dim(0);
  if (upstream.shape() != Shape{n, f, h, w}) {
    throw DimensionError("conv2d: upstream shape " + shape_str(upstream.shape()) +
                         " does not match output [" + std::to_string(n) + "," +
                         std::to_string(f) + "," + std::to_string(h) + "," +
                         std::to_string(w) + "]");
  }
  LayerGrads g;
  g.d_input = Tensor(input.shape());
  Tensor d_weights(weights.shape());
  Tensor d_bias(Shape{f});

  // d_input: scatter upstream through the flipped kernel; one worker owns a
  // whole sample so accumulation order is fixed.
  parallel_for(n, 1, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t in = lo; in < hi; ++in) {
      for (std::size_t fo = 0; fo < f; ++fo) {
        const double* uplane = upstream.data() + (in * f + fo) * h * w;
        for (std::size_t ic = 0; ic < c; ++ic) {
          double* gplane = g.d_input.data() + (in * c + ic) * h * w;
          const double* k = weights.data() + (fo * c + ic) * 9;
          for (int dh = -1; dh <= 1; ++dh) {
            for (int dw = -1; dw <= 1; ++dw) {
              const double wv = k[(dh + 1) * 3 + (dw + 1)];
              const std::size_t y0 = dh < 0 ? 1 : 0;
              const std::size_t y1 = dh > 0 ? h - 1 : h;
              const std::size_t x0 = dw < 0 ? 1 : 0;
              const std::size_t x1 = dw > 0 ? w - 1 : w;
              for (std::size_t y = y0; y < y1; ++y) {
                double* grow = gplane + (y + dh) * w + dw;
                const double* urow = uplane + y * w;
                for (std::size_t x = x0; x < x1; ++x) grow[x] += wv * urow[x];
              }
            }
          }
        }
      }
    }
  });

  // d_weights / d_bias: one worker owns a filter, samples reduced in order.
  parallel_for(f, 1, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t fo = lo; fo < hi; ++fo) {
      double bsum = 0.0;
      for (std::size_t in = 0; in < n; ++in) {
        const double* uplane = upstream.data() + (in * f + fo) * h * w;
        for (std::size_t i = 0; i < h * w; ++i) bsum += uplane[i];
        for (std::size_t ic = 0; ic < c; ++ic) {
          const double* iplane = input.data() + (in * c + ic) * h * w;
          double* k = d_weights.data() + (fo * c + ic) * 9;
          for (int dh = -1; dh <= 1; ++dh) {
            for (int dw = -1; dw <= 1; ++dw) {
              const std::size_t y0 = dh < 0 ? 1 : 0;
              const std::size_t y1 = dh > 0 ? h - 1 : h;
              const std::size_t x0 = dw < 0 ? 1 : 0;
              const std::size_t x1 = dw > 0 ? w - 1 : w;
              double acc = 0.0;
              for (std::size_t y = y0; y < y1; ++y) {
                const double* irow = iplane + (y + dh) * w + dw;
                const double* urow = uplane + y * w;
                for (std::size_t x = x0; x < x1; ++x) acc += urow[x] * irow[x];
              }
              k[(dh + 1) * 3 + (dw + 1)] += acc;
            }
          }
        }
      }
      d_bias[fo] = bsum;
    }
  });

  g.d_params.push_back(std::move(d_weights));
  g.d_params.push_back(std::move(d_bias));
  return g;
}

inline LayerResult conv2d(const Tensor& input, const Tensor& weights,
                          const Tensor& bias, const Tensor* upstream = nullptr) {
  LayerResult r;
  r.output = conv2d_forward(input, weights, bias);
  if (upstream) r.grads = conv2d_backward(input, weights, *upstream);
  return r;
}

// ---------------------------------------------------------------------------
// fully connected: output = input * weights^T + bias
// ---------------------------------------------------------------------------

inline void check_fc_shapes(const Tensor& input, const Tensor& weights,
                            const Tensor& bias) {
  if (input.ndim() != 2 || weights.ndim() != 2) {
    throw DimensionError("fully_connected: need input [N,D_in] and weights "
                         "[D_out,D_in], got " +
                         shape_str(input.shape()) + " and " +
                         shape_str(weights.shape()));
  }
  if (input.dim(1) != weights.dim(1)) {
    throw DimensionError("fully_connected: input axis 1 is " +
                         std::to_string(input.dim(1)) + " but weights axis 1 is " +
                         std::to_string(weights.dim(1)));
  }
  if (bias.ndim() != 1 || bias.dim(0) != weights.dim(0)) {
    throw DimensionError("fully_connected: bias must be [D_out]=" +
                         std::to_string(weights.dim(0)) + ", got " +
                         shape_str(bias.shape()));
  }
}

inline Tensor fc_forward(const Tensor& input, const Tensor& weights,
                         const Tensor& bias) {
  check_fc_shapes(input, weights, bias);
  const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(0);
  Tensor out(Shape{n, dout});
  parallel_for(n, 8, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* x = input.data() + i * din;
      double* y = out.data() + i * dout;
      for (std::size_t o = 0; o < dout; ++o) {
        const double* wrow = weights.data() + o * din;
        double acc = bias[o];
        for (std::size_t k = 0; k < din; ++k) acc += x[k] * wrow[k];
        y[o] = acc;
      }
    }
  });
  return out;
}

inline LayerGrads fc_backward(const Tensor& input, const Tensor& weights,
                              const Tensor& upstream) {
  const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(0);
  if (upstream.shape() != Shape{n, dout}) {
    throw DimensionError("fully_connected: upstream shape " +
                         shape_str(upstream.shape()) + " does not match output [" +
                         std::to_string(n) + "," + std::to_string(dout) + "]");
  }
  LayerGrads g;
  g.d_input = Tensor(Shape{n, din});
  Tensor d_weights(Shape{dout, din});
  Tensor d_bias(Shape{dout});
  for (std::size_t i = 0; i < n; ++i) {
    const double* u = upstream.data() + i * dout;
    const double* x = input.data() + i * din;
    double* gx = g.d_input.data() + i * din;
    for (std::size_t o = 0; o < dout; ++o) {
      const double uo = u[o];
      const double* wrow = weights.data() + o * din;
      double* dw = d_weights.data() + o * din;
      for (std::size_t k = 0; k < din; ++k) {
        gx[k] += uo * wrow[k];
        dw[k] += uo * x[k];
      }
      d_bias[o] += uo;
    }
  }
  g.d_params.push_back(std::move(d_weights));
  g.d_params.push_back(std::move(d_bias));
  return g;
}

inline LayerResult fully_connected(const Tensor& input, const Tensor& weights,
                                   const Tensor& bias,
                                   const Tensor* upstream = nullptr) {
  LayerResult r;
  r.output = fc_forward(input, weights, bias);
  if (upstream) r.grads = fc_backward(input, weights, *upstream);
  return r;
}

// ---------------------------------------------------------------------------
// leaky ReLU
// ---------------------------------------------------------------------------

inline void check_lrelu_slope(double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ConfigError("leaky_relu: slope must lie in (0,1), got " +
                      std::to_string(slope));
  }
}

inline Tensor leaky_relu_forward(const Tensor& input, double slope) {
  check_lrelu_slope(slope);
  Tensor out(input.shape());
  const double* x = input.data();
  double* y = out.data();
  for (std::size_t i = 0; i < input.size(); ++i)
    y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return out;
}

// The kink at 0 takes the slope branch (fixed for determinism). The output
// sign is equivalent to the input sign for this choice, so the backward pass
// can run from either tensor.
inline Tensor leaky_relu_backward_from(const Tensor& ref, const Tensor& upstream,
                                       double slope) {
  check_same_shape(ref, upstream, "leaky_relu backward");
  Tensor d(ref.shape());
  const double* r = ref.data();
  const double* u = upstream.data();
  double* p = d.data();
  for (std::size_t i = 0; i < ref.size(); ++i)
    p[i] = u[i] * (r[i] > 0.0 ? 1.0 : slope);
  return d;
}

inline LayerResult leaky_relu(const Tensor& input, double slope,
                              const Tensor* upstream = nullptr) {
  LayerResult r;
  r.output = leaky_relu_forward(input, slope);
  if (upstream) {
    LayerGrads g;
    g.d_input = leaky_relu_backward_from(input, *upstream, slope);
    r.grads = std::move(g);
  }
  return r;
}

// ---------------------------------------------------------------------------
// group normalization over [N,C,H,W]
// ---------------------------------------------------------------------------

inline void check_gn_shapes(const Tensor& input, const Tensor& gamma,
                            const Tensor& beta, std::size_t groups) {
  if (input.ndim() != 4) {
    throw DimensionError("group_norm: input must be [N,C,H,W], got " +
                         shape_str(input.shape()));
  }
  const std::size_t c = input.dim(1);
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: channels " + std::to_string(c) +
                      " not divisible by groups " + std::to_string(groups));
  }
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 ||
      beta.dim(0) != c) {
    throw DimensionError("group_norm: gamma/beta must be [C]=" + std::to_string(c) +
                         ", got " + shape_str(gamma.shape()) + " and " +
                         shape_str(beta.shape()));
  }
}

// Normalizes each sample's channel groups to zero mean / unit variance with
// eps-stabilized variance; statistics never cross sample boundaries.
inline Tensor group_norm_forward(const Tensor& input, const Tensor& gamma,
                                 const Tensor& beta, std::size_t groups,
                                 double eps) {
  check_gn_shapes(input, gamma, beta, groups);
  const std::size_t n = input.dim(0), c = input.dim(1),
                    hw = input.dim(2) * input.dim(3);
  const std::size_t d = c / groups;
  const std::size_t m = d * hw;
  Tensor out(input.shape());
  parallel_for(n, 1, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t in = lo; in < hi; ++in) {
      for (std::size_t g = 0; g < groups; ++g) {
        const double* x = input.data() + (in * c + g * d) * hw;
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) mean += x[i];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double dx = x[i] - mean;
          var += dx * dx;
        }
        var /= static_cast<double>(m);
        const double ivar = 1.0 / std::sqrt(var + eps);
        double* y = out.data() + (in * c + g * d) * hw;
        for (std::size_t j = 0; j < d; ++j) {
          const double sc = gamma[g * d + j] * ivar;
          const double sh = beta[g * d + j] - sc * mean;
          for (std::size_t i = 0; i < hw; ++i) y[j * hw + i] = sc * x[j * hw + i] + sh;
        }
      }
    }
  });
  return out;
}

inline LayerGrads group_norm_backward(const Tensor& input, const Tensor& gamma,
                                      std::size_t groups, double eps,
                                      const Tensor& upstream) {
  check_same_shape(input, upstream, "group_norm backward");
  const std::size_t n = input.dim(0), c = input.dim(1),
                    hw = input.dim(2) * input.dim(3);
  const std::size_t d = c / groups;
  const std::size_t m = d * hw;
  LayerGrads out;
  out.d_input = Tensor(input.shape());
  Tensor d_gamma(Shape{c});
  Tensor d_beta(Shape{c});
  // Sample loop is sequential: d_gamma/d_beta reduce over samples and the
  // reduction order must not depend on worker count.
  std::vector<double> xhat(m);
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t g = 0; g < groups; ++g) {
      const double* x = input.data() + (in * c + g * d) * hw;
      const double* u = upstream.data() + (in * c + g * d) * hw;
      double* gx = out.d_input.data() + (in * c + g * d) * hw;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += x[i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double dx = x[i] - mean;
        var += dx * dx;
      }
      var /= static_cast<double>(m);
      const double ivar = 1.0 / std::sqrt(var + eps);
      for (std::size_t i = 0; i < m; ++i) xhat[i] = (x[i] - mean) * ivar;

      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double ga = gamma[g * d + j];
        double dg = 0.0, db = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          const double ui = u[j * hw + i];
          dg += ui * xhat[j * hw + i];
          db += ui;
          sum_g += ui * ga;
          sum_gx += ui * ga * xhat[j * hw + i];
        }
        d_gamma[g * d + j] += dg;
        d_beta[g * d + j] += db;
      }
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t j = 0; j < d; ++j) {
        const double ga = gamma[g * d + j];
        for (std::size_t i = 0; i < hw; ++i) {
          const double gi = u[j * hw + i] * ga;
          gx[j * hw + i] =
              ivar * (gi - inv_m * (sum_g + xhat[j * hw + i] * sum_gx));
        }
      }
    }
  }
  out.d_params.push_back(std::move(d_gamma));
  out.d_params.push_back(std::move(d_beta));
  return out;
}

inline LayerResult group_norm(const Tensor& input, const Tensor& gamma,
                              const Tensor& beta, std::size_t groups, double eps,
                              const Tensor* upstream = nullptr) {
  LayerResult r;
  r.output = group_norm_forward(input, gamma, beta, groups, eps);
  if (upstream) r.grads = group_norm_backward(input, gamma, groups, eps, *upstream);
  return r;
}

// ---------------------------------------------------------------------------
// dropout (inverted: survivors scaled by 1/(1-rate), eval is the identity)
// ---------------------------------------------------------------------------

struct DropoutResult {
  Tensor output;
  Tensor mask;  // the applied multiplier, 0 or 1/(1-rate); replay with *
};

inline DropoutResult dropout(const Tensor& input, double rate, Mode mode,
                             Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  DropoutResult r;
  if (mode == Mode::kEval || rate == 0.0) {
    r.output = input;
    r.mask = Tensor::full(input.shape(), 1.0);
    return r;
  }
  r.output = Tensor(input.shape());
  r.mask = Tensor(input.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : keep_scale;
    r.mask[i] = m;
    r.output[i] = m * input[i];
  }
  return r;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

inline Tensor maxpool2_forward(const Tensor& input) {
  if (input.ndim() != 4 || input.dim(2) % 2 != 0 || input.dim(3) % 2 != 0) {
    throw DimensionError("maxpool2: input must be [N,C,H,W] with even H,W, got " +
                         shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  Tensor out(Shape{n, c, h / 2, w / 2});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* in = input.data() + p * h * w;
    double* o = out.data() + p * (h / 2) * (w / 2);
    for (std::size_t y = 0; y < h; y += 2) {
      for (std::size_t x = 0; x < w; x += 2) {
        const double m = std::max(std::max(in[y * w + x], in[y * w + x + 1]),
                                  std::max(in[(y + 1) * w + x], in[(y + 1) * w + x + 1]));
        o[(y / 2) * (w / 2) + x / 2] = m;
      }
    }
  }
  return out;
}

// Routes upstream to the first maximum in scan order (ties broken
// deterministically).
inline Tensor maxpool2_backward(const Tensor& input, const Tensor& upstream) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  if (upstream.shape() != Shape{n, c, h / 2, w / 2}) {
    throw DimensionError("maxpool2: upstream shape " + shape_str(upstream.shape()) +
                         " does not match pooled output");
  }
  Tensor d(input.shape());
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* in = input.data() + p * h * w;
    const double* u = upstream.data() + p * (h / 2) * (w / 2);
    double* g = d.data() + p * h * w;
    for (std::size_t y = 0; y < h; y += 2) {
      for (std::size_t x = 0; x < w; x += 2) {
        const std::size_t idx[4] = {y * w + x, y * w + x + 1, (y + 1) * w + x,
                                    (y + 1) * w + x + 1};
        std::size_t best = idx[0];
        for (int k = 1; k < 4; ++k) {
          if (in[idx[k]] > in[best]) best = idx[k];
        }
        g[best] += u[(y / 2) * (w / 2) + x / 2];
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// row softmax with max subtraction
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& logits) {
  if (logits.ndim() != 2) {
    throw DimensionError("softmax: logits must be [N,C], got " +
                         shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * c;
    double* p = out.data() + i * c;
    double zmax = z[0];
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - zmax);
      sum += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
  }
  return out;
}

}  // namespace emocross::nn
