#pragma once

#include <cmath>
#include <cstddef>

#include "concm/matrix.hpp"
#include "concm/rng.hpp"
#include "concm/tape.hpp"

namespace concm {

/// Affine map x W + b on row vectors.
struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out

  std::size_t in() const noexcept { return weight.rows(); }
  std::size_t out() const noexcept { return weight.cols(); }

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    Linear l{Matrix(in, out), Matrix(1, out)};
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : l.weight.data()) w = rng.normal(0.0, sd);
    return l;
  }

  bool all_finite() const noexcept { return weight.all_finite() && bias.all_finite(); }
};

struct LinearVars {
  ad::Var weight;
  ad::Var bias;
};

inline LinearVars bind(ad::Tape& t, const Linear& l, bool trainable) {
  if (trainable) return {t.parameter(l.weight), t.parameter(l.bias)};
  return {t.constant(l.weight), t.constant(l.bias)};
}

inline ad::Var apply(ad::Tape& t, const LinearVars& l, ad::Var x) {
  return ad::add_row(t, ad::matmul(t, x, l.weight), l.bias);
}

/// Plain evaluation without a tape.
inline Matrix apply(const Linear& l, const Matrix& x) {
  Matrix y = matmul(x, l.weight);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += l.bias(0, j);
  return y;
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Matrix softplus(Matrix m) {
  for (double& x : m.data()) x = softplus(x);
  return m;
}

}  // namespace concm
