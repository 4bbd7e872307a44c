// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "diffcore/tape.hpp"

namespace scale {

/// Adam moments with decoupled weight decay:
///   p <- p * (1 - lr * wd), then the bias-corrected Adam step.
/// Moments are matched to parameters by position.
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  /// `t` is the 1-based step count used for bias correction.
  void step(const std::vector<ParamTensor<float>*>& params, double lr, double weight_decay, std::uint64_t t) {
    ensure_moments(params);
    const auto decay = static_cast<float>(1.0 - lr * weight_decay);
    const auto b1 = static_cast<float>(kBeta1);
    const auto b2 = static_cast<float>(kBeta2);
    const auto c1 = static_cast<float>(1.0 - std::pow(kBeta1, static_cast<double>(t)));
    const auto c2 = static_cast<float>(1.0 - std::pow(kBeta2, static_cast<double>(t)));
    const auto rate = static_cast<float>(lr);
    const auto eps = static_cast<float>(kEps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->value;
      const auto& g = params[i]->grad;
      p *= decay;
      first[i] = b1 * first[i] + (1.0f - b1) * g;
      second[i] = b2 * second[i] + (1.0f - b2) * g.cwiseProduct(g);
      p.array() -= rate * (first[i].array() / c1) / ((second[i].array() / c2).sqrt() + eps);
    }
  }

  void ensure_moments(const std::vector<ParamTensor<float>*>& params) {
    if (first.size() == params.size()) return;
    first.clear();
    second.clear();
    for (auto* p : params) {
      first.push_back(Matrix<float>::Zero(p->value.rows(), p->value.cols()));
      second.push_back(Matrix<float>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  std::vector<Matrix<float>> first;
  std::vector<Matrix<float>> second;
};

}  // namespace scale
