// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "condnet/condnet.hpp"
#include "diffcore/mlp.hpp"
#include "diffcore/ops.hpp"

namespace scale {

/// Rows pushed through the encoder and decoder since the last reset.
struct ForwardCounters {
  static inline std::atomic<std::uint64_t> encoder_rows{0};
  static inline std::atomic<std::uint64_t> decoder_rows{0};
  static void reset() {
    encoder_rows = 0;
    decoder_rows = 0;
  }
};

enum class ElboMode { kTrainSampled, kEvalMean };

/// Scalar view of one (sample, class) ELBO evaluation.
struct ElboBreakdown {
  double recon_logprob = 0;
  double kl = 0;
  double beta = 1;
  double elbo = 0;
  double energy = 0;
};

template <class Real>
struct CvaeParams {
  GaussianMlpParams<Real> encoder;
  MlpParams<Real> decoder;

  CvaeParams() = default;
  CvaeParams(std::size_t d_s, std::size_t d_c, std::size_t d_z)
      : encoder("encoder", MlpSpec::quarter(d_s + d_c, d_z)),
        decoder("decoder", MlpSpec::quarter(d_z + d_c, d_s)) {}

  void init(Rng& rng) {
    encoder.init(rng);
    decoder.init(rng);
  }
  void collect(std::vector<ParamTensor<Real>*>& out) {
    encoder.collect(out);
    decoder.collect(out);
  }
};

/// q(z | x, c) for each pair p, reading x from row idx_x[p] of `x` and c from
/// row idx_c[p] of `c`.
template <class Real>
GaussianVars encode(Tape<Real>& t, CvaeParams<Real>& p, Var x, std::span<const std::size_t> idx_x,
                    Var c, std::span<const std::size_t> idx_c) {
  const auto in = static_cast<std::size_t>(t.value(x).cols() + t.value(c).cols());
  if (in != p.encoder.spec.in_dim) {
    throw ValidationError("encode: [x; c] width " + std::to_string(in) + " != " +
                          std::to_string(p.encoder.spec.in_dim));
  }
  ForwardCounters::encoder_rows += idx_x.size();
  const Var pre = ad::affine_pairs(t, x, idx_x, c, idx_c, t.param(p.encoder.w1), t.param(p.encoder.b1));
  return gaussian_heads(t, p.encoder, ad::relu(t, pre));
}

/// z = mu + exp(0.5 log_var) * eps with eps supplied as a constant node.
template <class Real>
Var reparameterize(Tape<Real>& t, const GaussianVars& q, Var eps) {
  const Var sigma = ad::exp(t, ad::scale(t, q.log_var, Real(0.5)));
  return ad::add(t, q.mu, ad::mul(t, sigma, eps));
}

/// Reconstruction mean mu_d(z, c) for each pair; z row p pairs with c row idx_c[p].
template <class Real>
Var decode(Tape<Real>& t, CvaeParams<Real>& p, Var z, Var c, std::span<const std::size_t> idx_c) {
  const auto in = static_cast<std::size_t>(t.value(z).cols() + t.value(c).cols());
  if (in != p.decoder.spec.in_dim) {
    throw ValidationError("decode: [z; c] width " + std::to_string(in) + " != " +
                          std::to_string(p.decoder.spec.in_dim));
  }
  const std::size_t rows = idx_c.size();
  ForwardCounters::decoder_rows += rows;
  std::vector<std::size_t> identity(rows);
  for (std::size_t i = 0; i < rows; ++i) identity[i] = i;
  const Var pre = ad::affine_pairs(t, z, identity, c, idx_c, t.param(p.decoder.w1), t.param(p.decoder.b1));
  return ad::affine(t, ad::relu(t, pre), t.param(p.decoder.w2), t.param(p.decoder.b2));
}

/// Closed-form KL(q || p) for diagonal Gaussians, one value per row.
template <class Real>
Var gaussian_kl_rows(Tape<Real>& t, const GaussianVars& q, const GaussianVars& p) {
  const auto& mq = t.value(q.mu);
  const auto& lq = t.value(q.log_var);
  const auto& mp = t.value(p.mu);
  const auto& lp = t.value(p.log_var);
  if (mq.rows() != mp.rows() || mq.cols() != mp.cols()) {
    throw ValidationError("gaussian_kl: dimension mismatch");
  }
  const auto inv_vp = (-lp.array()).exp();
  const auto diff = mq.array() - mp.array();
  Matrix<Real> terms = lp.array() - lq.array() + (lq.array().exp() + diff.square()) * inv_vp - Real(1);
  Matrix<Real> kl = Real(0.5) * terms.rowwise().sum();
  return t.push(std::move(kl), "gaussian_kl", {q.mu, q.log_var, p.mu, p.log_var},
                [q, p](Tape<Real>& tp, const Matrix<Real>& g) {
                  const auto& mqv = tp.value(q.mu).array();
                  const auto& lqv = tp.value(q.log_var).array();
                  const auto& mpv = tp.value(p.mu).array();
                  const auto& lpv = tp.value(p.log_var).array();
                  const Matrix<Real> gb = g.replicate(1, tp.value(q.mu).cols());
                  const auto inv = (-lpv).exp();
                  const auto d = mqv - mpv;
                  const Matrix<Real> dmu = (d * inv).matrix().cwiseProduct(gb);
                  tp.accumulate(q.mu, dmu);
                  tp.accumulate(p.mu, -dmu);
                  tp.accumulate(q.log_var,
                                (Real(0.5) * ((lqv - lpv).exp() - Real(1))).matrix().cwiseProduct(gb));
                  tp.accumulate(p.log_var,
                                (Real(0.5) * (Real(1) - (lqv.exp() + d.square()) * inv)).matrix().cwiseProduct(gb));
                });
}

/// -0.5 ||x_{idx[p]} - mu_d[p]||^2 per pair (unit-variance decoder, constant dropped).
template <class Real>
Var recon_logprob_rows(Tape<Real>& t, Var x, std::span<const std::size_t> idx_x, Var mu_d) {
  const auto& X = t.value(x);
  const auto& M = t.value(mu_d);
  Matrix<Real> resid(M.rows(), M.cols());
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    resid.row(r) = X.row(static_cast<Eigen::Index>(idx_x[static_cast<std::size_t>(r)])) - M.row(r);
  }
  Matrix<Real> out = Real(-0.5) * resid.rowwise().squaredNorm();
  return t.push(std::move(out), "recon_logprob", {x, mu_d},
                [mu_d, resid = std::move(resid)](Tape<Real>& tp, const Matrix<Real>& g) {
                  tp.accumulate(mu_d, resid.cwiseProduct(g.replicate(1, resid.cols())));
                });
}

template <class Real>
struct ElboVars {
  GaussianVars posterior;
  Var z;
  Var recon;
  Var kl;
  Var elbo;
  Var energy;
};

/// ELBO = recon - beta * KL and energy = -ELBO for every pair
/// (x row idx_x[p], class row idx_c[p]). `prior_rows` holds one prior per
/// class row of `c`. In kEvalMean mode z is the posterior mean and `eps` is
/// ignored.
template <class Real>
ElboVars<Real> elbo_pairs(Tape<Real>& t, CvaeParams<Real>& p, Var x, std::span<const std::size_t> idx_x,
                          Var c, std::span<const std::size_t> idx_c, const GaussianVars& prior_rows,
                          Real beta, ElboMode mode, Var eps = {}) {
  ElboVars<Real> out;
  out.posterior = encode(t, p, x, idx_x, c, idx_c);
  out.z = mode == ElboMode::kEvalMean ? out.posterior.mu : reparameterize(t, out.posterior, eps);
  const Var mu_d = decode(t, p, out.z, c, idx_c);
  out.recon = recon_logprob_rows(t, x, idx_x, mu_d);
  const GaussianVars pri{ad::gather_rows(t, prior_rows.mu, idx_c), ad::gather_rows(t, prior_rows.log_var, idx_c)};
  out.kl = gaussian_kl_rows(t, out.posterior, pri);
  out.elbo = ad::sub(t, out.recon, ad::scale(t, out.kl, beta));
  out.energy = ad::scale(t, out.elbo, Real(-1));
  return out;
}

/// Scalar closed-form KL, same formula as gaussian_kl_rows.
inline double gaussian_kl(std::span<const double> mu_q, std::span<const double> log_var_q,
                          std::span<const double> mu_p, std::span<const double> log_var_p) {
  if (mu_q.size() != mu_p.size() || log_var_q.size() != mu_q.size() || log_var_p.size() != mu_p.size()) {
    throw ValidationError("gaussian_kl: dimension mismatch");
  }
  double acc = 0;
  for (std::size_t d = 0; d < mu_q.size(); ++d) {
    const double diff = mu_q[d] - mu_p[d];
    acc += log_var_p[d] - log_var_q[d] + (std::exp(log_var_q[d]) + diff * diff) * std::exp(-log_var_p[d]) - 1.0;
  }
  return 0.5 * acc;
}

}  // namespace scale
