// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "common/error.hpp"

namespace scale {

inline constexpr double kCosineEps = 1e-8;

/// log sum exp(v_i), shifted by the maximum so large inputs never overflow.
template <class Real>
Real stable_lse(std::span<const Real> values) {
  if (values.empty()) throw ValidationError("stable_lse: empty input");
  const Real m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  Real acc = 0;
  for (Real v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

/// log(1 + e^x) = max(x, 0) + log1p(e^{-|x|}).
template <class Real>
Real stable_softplus(Real x) {
  return std::max(x, Real(0)) + std::log1p(std::exp(-std::abs(x)));
}

/// 1 / (1 + e^{-x}), the derivative of softplus.
template <class Real>
Real logistic(Real x) {
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

/// Cosine similarity with each norm floored at kCosineEps; a zero vector gives 0.
template <class Real>
Real cosine_sim(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) throw ValidationError("cosine_sim: length mismatch");
  Real dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const Real eps = static_cast<Real>(kCosineEps);
  return dot / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
}

}  // namespace scale
