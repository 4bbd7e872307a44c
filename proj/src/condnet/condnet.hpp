// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "diffcore/mlp.hpp"
#include "diffcore/numerics.hpp"
#include "diffcore/ops.hpp"

namespace scale {

inline constexpr double kLogVarMin = -8.0;
inline constexpr double kLogVarMax = 8.0;

/// Mean and clamped log-variance rows of a diagonal Gaussian.
struct GaussianVars {
  Var mu;
  Var log_var;
};

/// Text-side networks: the two conditioning branches, the prior net and the
/// latent-prototype projection.
template <class Real>
struct CondNetParams {
  MlpParams<Real> text_global;
  MlpParams<Real> text_pool;
  GaussianMlpParams<Real> prior;
  MlpParams<Real> proto;

  CondNetParams() = default;
  CondNetParams(std::size_t d_t, std::size_t d_c, std::size_t d_z)
      : text_global("cond.global", MlpSpec::quarter(d_t, d_c / 2)),
        text_pool("cond.pool", MlpSpec::quarter(d_t, d_c / 2)),
        prior("prior", MlpSpec::quarter(d_c, d_z)),
        proto("proto", MlpSpec::quarter(d_t, d_z)) {}

  void init(Rng& rng) {
    text_global.init(rng);
    text_pool.init(rng);
    prior.init(rng);
    proto.init(rng);
  }
  void collect(std::vector<ParamTensor<Real>*>& out) {
    text_global.collect(out);
    text_pool.collect(out);
    prior.collect(out);
    proto.collect(out);
  }
};

/// Mean over the L_y token rows of a row-major L_y x D_t block.
template <class Real>
Matrix<Real> pool_tokens(std::span<const float> tokens, std::size_t rows, std::size_t d_t) {
  if (rows == 0) throw ValidationError("pool_tokens: class has no token rows");
  if (tokens.size() != rows * d_t) throw ValidationError("pool_tokens: token block size mismatch");
  Matrix<Real> out = Matrix<Real>::Zero(1, static_cast<Eigen::Index>(d_t));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d_t; ++c) out(0, static_cast<Eigen::Index>(c)) += tokens[r * d_t + c];
  }
  return out / static_cast<Real>(rows);
}

/// Shared tail of the prior and posterior nets: two affine heads on the
/// hidden activations, log-variance clamped to [kLogVarMin, kLogVarMax].
template <class Real>
GaussianVars gaussian_heads(Tape<Real>& t, GaussianMlpParams<Real>& p, Var hidden) {
  const Var mu = ad::affine(t, hidden, t.param(p.w_mu), t.param(p.b_mu));
  const Var lv_raw = ad::affine(t, hidden, t.param(p.w_lv), t.param(p.b_lv));
  return {mu, ad::clamp(t, lv_raw, static_cast<Real>(kLogVarMin), static_cast<Real>(kLogVarMax))};
}

/// c_y = [MLP(h_y); MLP(Pool(H_y))], one row per class.
template <class Real>
Var condition(Tape<Real>& t, CondNetParams<Real>& p, Var h_global, Var h_pooled) {
  const Var a = mlp_forward(t, p.text_global, h_global);
  const Var b = mlp_forward(t, p.text_pool, h_pooled);
  return ad::concat_cols(t, a, b);
}

/// Class-conditional prior N(mu_p(c), sigma_p^2(c)).
template <class Real>
GaussianVars prior(Tape<Real>& t, CondNetParams<Real>& p, Var c) {
  if (static_cast<std::size_t>(t.value(c).cols()) != p.prior.spec.in_dim) {
    throw ValidationError("prior: conditioning width mismatch");
  }
  const Var h = ad::relu(t, ad::affine(t, c, t.param(p.prior.w1), t.param(p.prior.b1)));
  return gaussian_heads(t, p.prior, h);
}

/// Latent prototype g(h_y).
template <class Real>
Var prototype(Tape<Real>& t, CondNetParams<Real>& p, Var h_global) {
  return mlp_forward(t, p.proto, h_global);
}

/// s = cos(h_pos, h_neg), i.e. the inner product of the normalized embeddings.
inline double semantic_similarity(std::span<const float> h_pos, std::span<const float> h_neg) {
  std::vector<double> a(h_pos.begin(), h_pos.end());
  std::vector<double> b(h_neg.begin(), h_neg.end());
  return cosine_sim<double>(a, b);
}

}  // namespace scale
