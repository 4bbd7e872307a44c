// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvae/cvae.hpp"
#include "diffcore/ops.hpp"
#include "model/model.hpp"

namespace scale {

struct ScaleHyper {
  double alpha = 1.0;        // semantic bias on negatives
  double tau = 1.0;          // base margin
  double beta_u = 0.5;       // margin relaxation per unit uncertainty
  double gamma = 2.0;        // uncertainty reweighting
  double lambda_temp = 0.2;  // contrast temperature
  double lambda1 = 1.0;      // weight of the listwise energy loss
  double lambda2 = 0.5;      // weight of the prototype contrast

  void validate() const;
  bool operator==(const ScaleHyper&) const = default;
};

inline void ScaleHyper::validate() const {
  for (double v : {alpha, tau, beta_u, gamma, lambda_temp, lambda1, lambda2}) {
    if (!std::isfinite(v)) throw ValidationError("hyper: all values must be finite");
  }
  if (alpha < 0 || beta_u < 0 || gamma < 0 || lambda1 < 0 || lambda2 < 0) {
    throw ValidationError("hyper: alpha, beta_u, gamma, lambda1, lambda2 must be >= 0");
  }
  if (!(lambda_temp > 0)) throw ValidationError("hyper: lambda_temp must be > 0");
}

/// u = mean_d sigma_{q,d}^2 per row, detached from the graph.
template <class Real>
Var uncertainty(Tape<Real>& t, Var log_var_pos) {
  return ad::stop_gradient(t, ad::row_mean(t, ad::exp(t, log_var_pos)));
}

/// E_neg = log sum_j exp(E_j + alpha s_j), one value per segment.
/// `neg_energies` is a k x 1 column grouped by `offsets`; `similarities`
/// runs parallel to it.
template <class Real>
Var aggregate_negatives(Tape<Real>& t, Var neg_energies, std::span<const double> similarities,
                        std::span<const std::size_t> offsets, double alpha) {
  const auto& E = t.value(neg_energies);
  if (E.rows() == 0) throw ValidationError("aggregate_negatives: empty negative set");
  if (static_cast<std::size_t>(E.rows()) != similarities.size()) {
    throw ValidationError("aggregate_negatives: one similarity per negative required");
  }
  Matrix<Real> bias(E.rows(), 1);
  for (std::size_t j = 0; j < similarities.size(); ++j) {
    bias(static_cast<Eigen::Index>(j), 0) = static_cast<Real>(alpha * similarities[j]);
  }
  const Var biased = ad::add(t, neg_energies, t.constant(std::move(bias), "semantic_bias"));
  return ad::segment_lse(t, biased, offsets);
}

/// Delta = E_pos - E_neg + tau - beta_u * u.
template <class Real>
Var energy_gap(Tape<Real>& t, Var pos_energy, Var neg_aggregate, Var u, const ScaleHyper& h) {
  const Var gap = ad::sub(t, pos_energy, neg_aggregate);
  const Var relax = ad::scale(t, u, static_cast<Real>(-h.beta_u));
  return ad::add_scalar(t, ad::add(t, gap, relax), static_cast<Real>(h.tau));
}

/// mean_i exp(-gamma u_i) * softplus(Delta_i); u carries no gradient.
template <class Real>
Var scale_loss(Tape<Real>& t, Var gap, Var u, const ScaleHyper& h) {
  const Matrix<Real> weight = (t.value(u).array() * static_cast<Real>(-h.gamma)).exp().matrix();
  const Var w = t.constant(weight, "uncertainty_weight");
  return ad::mean_all(t, ad::mul(t, w, ad::softplus(t, gap)));
}

/// Cross-entropy of cosine logits sim(mu_q, proto_j) / lambda_temp against
/// the positive prototype, averaged over rows.
template <class Real>
Var proto_loss(Tape<Real>& t, Var mu_q_pos, Var prototypes, std::span<const std::size_t> pos_index,
               double lambda_temp) {
  const auto classes = static_cast<std::size_t>(t.value(prototypes).rows());
  for (std::size_t idx : pos_index) {
    if (idx >= classes) throw ValidationError("proto_loss: positive index out of range");
  }
  const Var logits = ad::scale(t, ad::cosine_matrix(t, mu_q_pos, prototypes), static_cast<Real>(1.0 / lambda_temp));
  return ad::mean_all(t, ad::row_cross_entropy(t, logits, pos_index));
}

/// -ELBO+ + lambda1 L_SCALE + lambda2 L_proto. The two weighted terms are
/// returned separately so callers can log them.
template <class Real>
struct TotalLossVars {
  Var total;
  Var weighted_scale;
  Var weighted_proto;
};

template <class Real>
TotalLossVars<Real> total_loss(Tape<Real>& t, Var neg_elbo_pos, Var l_scale, Var l_proto, const ScaleHyper& h) {
  for (auto [v, name] : {std::pair{neg_elbo_pos, "-elbo_pos"}, std::pair{l_scale, "l_scale"},
                         std::pair{l_proto, "l_proto"}}) {
    if (!t.value(v).allFinite()) throw NumericError(std::string("total_loss: non-finite ") + name);
  }
  const Var ws = ad::scale(t, l_scale, static_cast<Real>(h.lambda1));
  const Var wp = ad::scale(t, l_proto, static_cast<Real>(h.lambda2));
  return {ad::add(t, ad::add(t, neg_elbo_pos, ws), wp), ws, wp};
}

/// One minibatch, already gathered. Class-indexed arrays are local to the
/// batch: row k describes the k-th distinct class in the batch.
template <class Real>
struct BatchInputs {
  Matrix<Real> features;             // n x d_s
  std::vector<std::size_t> targets;  // n, local class index
  Matrix<Real> text_global;          // B x d_t
  Matrix<Real> text_pooled;          // B x d_t
  std::vector<double> similarity;    // B x B, row-major
};

template <class Real>
struct ObjectiveVars {
  Var total;
  Var neg_elbo;        // -mean ELBO over positive pairs
  Var l_scale;         // unweighted
  Var l_proto;         // unweighted
  Var weighted_scale;  // lambda1 * l_scale
  Var weighted_proto;  // lambda2 * l_proto
  Var uncertainty;     // n x 1, detached
  Var kl;              // P x 1 over all pairs
  Var energy;          // P x 1 over all pairs, p = i * B + k
};

/// The full training objective over a minibatch. Each sample is paired with
/// every class present in the batch; the non-target classes are its
/// negatives. `eps` holds one standard-normal row per pair. When
/// `frozen_uncertainty` is given it replaces the computed u (finite
/// difference checks hold u fixed, mirroring the stop-gradient).
template <class Real>
ObjectiveVars<Real> batch_objective(Tape<Real>& t, ScaleModel<Real>& model, const BatchInputs<Real>& in,
                                    const ScaleHyper& h, Real beta, const Matrix<Real>& eps,
                                    const Matrix<Real>* frozen_uncertainty = nullptr) {
  const std::size_t n = in.targets.size();
  const auto classes = static_cast<std::size_t>(in.text_global.rows());
  if (n == 0) throw ValidationError("batch_objective: empty batch");
  if (static_cast<std::size_t>(in.features.rows()) != n) throw ValidationError("batch_objective: feature rows != targets");
  if (in.similarity.size() != classes * classes) throw ValidationError("batch_objective: similarity must be B x B");
  const std::size_t pairs = n * classes;
  if (static_cast<std::size_t>(eps.rows()) != pairs || static_cast<std::size_t>(eps.cols()) != model.dims.d_z) {
    throw ValidationError("batch_objective: eps must be (n*B) x d_z");
  }

  const Var x = t.constant(in.features, "features");
  const Var hg = t.constant(in.text_global, "text_global");
  const Var hp = t.constant(in.text_pooled, "text_pooled");
  const Var c = condition(t, model.cond, hg, hp);
  const GaussianVars pri = prior(t, model.cond, c);

  std::vector<std::size_t> idx_x(pairs), idx_c(pairs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < classes; ++k) {
      idx_x[i * classes + k] = i;
      idx_c[i * classes + k] = k;
    }
  }
  const ElboVars<Real> ev = elbo_pairs(t, model.cvae, x, idx_x, c, idx_c, pri, beta, ElboMode::kTrainSampled,
                                       t.constant(eps, "eps"));

  std::vector<std::size_t> pos_flat(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (in.targets[i] >= classes) throw ValidationError("batch_objective: target outside batch classes");
    pos_flat[i] = i * classes + in.targets[i];
  }
  ObjectiveVars<Real> out;
  out.kl = ev.kl;
  out.energy = ev.energy;
  out.neg_elbo = ad::scale(t, ad::mean_all(t, ad::gather_elems(t, ev.elbo, pos_flat)), Real(-1));

  const Var lv_pos = ad::gather_rows(t, ev.posterior.log_var, pos_flat);
  out.uncertainty = frozen_uncertainty ? t.constant(*frozen_uncertainty, "frozen_u") : uncertainty(t, lv_pos);

  // Samples with at least one negative class contribute to L_SCALE.
  std::vector<std::size_t> contrib, neg_flat, offsets{0};
  std::vector<double> sims;
  for (std::size_t i = 0; i < n; ++i) {
    if (classes < 2) break;
    contrib.push_back(i);
    const std::size_t pos = in.targets[i];
    for (std::size_t k = 0; k < classes; ++k) {
      if (k == pos) continue;
      neg_flat.push_back(i * classes + k);
      sims.push_back(in.similarity[pos * classes + k]);
    }
    offsets.push_back(neg_flat.size());
  }
  if (!contrib.empty()) {
    std::vector<std::size_t> contrib_pos(contrib.size());
    for (std::size_t j = 0; j < contrib.size(); ++j) contrib_pos[j] = pos_flat[contrib[j]];
    const Var e_pos = ad::gather_elems(t, ev.energy, contrib_pos);
    const Var e_neg = aggregate_negatives(t, ad::gather_elems(t, ev.energy, neg_flat), sims, offsets, h.alpha);
    const Var u = ad::gather_rows(t, out.uncertainty, contrib);
    out.l_scale = scale_loss(t, energy_gap(t, e_pos, e_neg, u, h), u, h);
  } else {
    out.l_scale = t.constant(Matrix<Real>::Zero(1, 1), "l_scale_empty");
  }

  const Var protos = prototype(t, model.cond, hg);
  const Var mu_pos = ad::gather_rows(t, ev.posterior.mu, pos_flat);
  out.l_proto = proto_loss(t, mu_pos, protos, in.targets, h.lambda_temp);

  const TotalLossVars<Real> tl = total_loss(t, out.neg_elbo, out.l_scale, out.l_proto, h);
  out.total = tl.total;
  out.weighted_scale = tl.weighted_scale;
  out.weighted_proto = tl.weighted_proto;
  return out;
}

}  // namespace scale
