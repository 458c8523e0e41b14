#pragma once

#include <algorithm>
#include <cmath>

#include "emocross/tensor.hpp"

namespace emocross::nn {

// Central finite-difference check of an analytic gradient. fn maps a tensor
// to a scalar and must be deterministic (evaluated twice at the base point to
// verify). Returns max over coordinates of
//   |analytic - central| / max(|analytic|, |central|, 1e-8).
template <typename Fn>
double finite_diff_check(const Fn& fn, const Tensor& input,
                         const Tensor& analytic, double step) {
  if (!(step > 0.0)) {
    throw ConfigError("finite_diff_check: step must be positive");
  }
  check_same_shape(input, analytic, "finite_diff_check");
  const double f0 = fn(input);
  if (fn(input) != f0) {
    throw ContractError("finite_diff_check: fn is not deterministic at the base point");
  }
  Tensor x = input;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = fn(x);
    x[i] = orig - step;
    const double fm = fn(x);
    x[i] = orig;
    const double central = (fp - fm) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace emocross::nn
