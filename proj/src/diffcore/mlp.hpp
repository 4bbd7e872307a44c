// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "diffcore/ops.hpp"
#include "diffcore/tape.hpp"

namespace scale {

enum class Activation { kRelu };

struct MlpSpec {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::kRelu;

  /// Single hidden layer sized at a quarter of the input width.
  static MlpSpec quarter(std::size_t in, std::size_t out) {
    return MlpSpec{in, hidden_for(in), out, Activation::kRelu};
  }
  static std::size_t hidden_for(std::size_t in) {
    const auto h = static_cast<std::size_t>(std::lround(static_cast<double>(in) / 4.0));
    return h == 0 ? 1 : h;
  }
  bool operator==(const MlpSpec&) const = default;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
template <class Real>
void init_uniform(ParamTensor<Real>& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<Real>((2.0 * rng.uniform() - 1.0) * bound);
  }
}

/// linear -> activation -> linear.
template <class Real>
struct MlpParams {
  MlpSpec spec;
  ParamTensor<Real> w1, b1, w2, b2;

  MlpParams() = default;
  MlpParams(const std::string& prefix, const MlpSpec& s)
      : spec(s),
        w1(prefix + ".w1", static_cast<Eigen::Index>(s.hidden_dim), static_cast<Eigen::Index>(s.in_dim)),
        b1(prefix + ".b1", 1, static_cast<Eigen::Index>(s.hidden_dim)),
        w2(prefix + ".w2", static_cast<Eigen::Index>(s.out_dim), static_cast<Eigen::Index>(s.hidden_dim)),
        b2(prefix + ".b2", 1, static_cast<Eigen::Index>(s.out_dim)) {}

  void init(Rng& rng) {
    init_uniform(w1, spec.in_dim, rng);
    init_uniform(b1, spec.in_dim, rng);
    init_uniform(w2, spec.hidden_dim, rng);
    init_uniform(b2, spec.hidden_dim, rng);
  }
  void collect(std::vector<ParamTensor<Real>*>& out) { out.insert(out.end(), {&w1, &b1, &w2, &b2}); }
};

/// Hidden layer followed by two affine heads (mean and log-variance).
template <class Real>
struct GaussianMlpParams {
  MlpSpec spec;  // out_dim is the width of each head
  ParamTensor<Real> w1, b1, w_mu, b_mu, w_lv, b_lv;

  GaussianMlpParams() = default;
  GaussianMlpParams(const std::string& prefix, const MlpSpec& s)
      : spec(s),
        w1(prefix + ".w1", static_cast<Eigen::Index>(s.hidden_dim), static_cast<Eigen::Index>(s.in_dim)),
        b1(prefix + ".b1", 1, static_cast<Eigen::Index>(s.hidden_dim)),
        w_mu(prefix + ".w_mu", static_cast<Eigen::Index>(s.out_dim), static_cast<Eigen::Index>(s.hidden_dim)),
        b_mu(prefix + ".b_mu", 1, static_cast<Eigen::Index>(s.out_dim)),
        w_lv(prefix + ".w_lv", static_cast<Eigen::Index>(s.out_dim), static_cast<Eigen::Index>(s.hidden_dim)),
        b_lv(prefix + ".b_lv", 1, static_cast<Eigen::Index>(s.out_dim)) {}

  void init(Rng& rng) {
    init_uniform(w1, spec.in_dim, rng);
    init_uniform(b1, spec.in_dim, rng);
    init_uniform(w_mu, spec.hidden_dim, rng);
    init_uniform(b_mu, spec.hidden_dim, rng);
    init_uniform(w_lv, spec.hidden_dim, rng);
    init_uniform(b_lv, spec.hidden_dim, rng);
  }
  void collect(std::vector<ParamTensor<Real>*>& out) {
    out.insert(out.end(), {&w1, &b1, &w_mu, &b_mu, &w_lv, &b_lv});
  }
};

template <class Real>
Var mlp_forward(Tape<Real>& t, MlpParams<Real>& p, Var x) {
  if (static_cast<std::size_t>(t.value(x).cols()) != p.spec.in_dim) {
    throw ValidationError("mlp_forward: input width " + std::to_string(t.value(x).cols()) +
                          " != in_dim " + std::to_string(p.spec.in_dim));
  }
  const Var h = ad::relu(t, ad::affine(t, x, t.param(p.w1), t.param(p.b1)));
  return ad::affine(t, h, t.param(p.w2), t.param(p.b2));
}

}  // namespace scale
