// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "diffcore/numerics.hpp"
#include "diffcore/tape.hpp"

// Differentiable ops over Tape<Real>. Each op computes its forward value
// eagerly and registers the vector-Jacobian product for the backward sweep.
namespace scale::ad {

using Index = Eigen::Index;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

template <class Real>
void require_same_shape(const Tape<Real>& t, Var a, Var b, const char* op) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  require(va.rows() == vb.rows() && va.cols() == vb.cols(),
          std::string(op) + ": shape mismatch " + std::to_string(va.rows()) + "x" +
              std::to_string(va.cols()) + " vs " + std::to_string(vb.rows()) + "x" +
              std::to_string(vb.cols()));
}

}  // namespace detail

/// Y = X W^T + b with X n x in, W out x in, b 1 x out.
template <class Real>
Var affine(Tape<Real>& t, Var x, Var w, Var b) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  const auto& B = t.value(b);
  detail::require(X.cols() == W.cols(), "affine: input width " + std::to_string(X.cols()) +
                                            " does not match weight width " +
                                            std::to_string(W.cols()));
  detail::require(B.rows() == 1 && B.cols() == W.rows(), "affine: bias shape mismatch");
  Matrix<Real> y = X * W.transpose();
  y.rowwise() += B.row(0);
  return t.push(std::move(y), "affine", {x, w, b}, [x, w, b](Tape<Real>& tp, const Matrix<Real>& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(w));
    if (tp.requires_grad(w)) tp.accumulate(w, g.transpose() * tp.value(x));
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

/// Affine map of a virtual concatenation [A[idx_a[p]]; B[idx_b[p]]] for each
/// output row p, without materializing the concatenated inputs. W is
/// out x (in_a + in_b); the two column blocks act on A and B respectively.
template <class Real>
Var affine_pairs(Tape<Real>& t, Var a, std::span<const std::size_t> idx_a, Var b,
                 std::span<const std::size_t> idx_b, Var w, Var bias) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  const auto& W = t.value(w);
  const Index in_a = A.cols();
  const Index in_b = B.cols();
  detail::require(W.cols() == in_a + in_b,
                  "affine_pairs: input width " + std::to_string(in_a + in_b) +
                      " does not match weight width " + std::to_string(W.cols()));
  detail::require(idx_a.size() == idx_b.size(), "affine_pairs: index lists differ in length");
  detail::require(t.value(bias).cols() == W.rows(), "affine_pairs: bias shape mismatch");
  const Matrix<Real> ya = A * W.leftCols(in_a).transpose();
  const Matrix<Real> yb = B * W.rightCols(in_b).transpose();
  const Index n = static_cast<Index>(idx_a.size());
  Matrix<Real> y(n, W.rows());
  for (Index p = 0; p < n; ++p) {
    const auto ia = static_cast<Index>(idx_a[static_cast<std::size_t>(p)]);
    const auto ib = static_cast<Index>(idx_b[static_cast<std::size_t>(p)]);
    detail::require(ia < A.rows() && ib < B.rows(), "affine_pairs: row index out of range");
    y.row(p) = ya.row(ia) + yb.row(ib) + t.value(bias).row(0);
  }
  std::vector<std::size_t> ka(idx_a.begin(), idx_a.end());
  std::vector<std::size_t> kb(idx_b.begin(), idx_b.end());
  return t.push(std::move(y), "affine_pairs", {a, b, w, bias},
                [a, b, w, bias, ka = std::move(ka), kb = std::move(kb), in_a, in_b](
                    Tape<Real>& tp, const Matrix<Real>& g) {
                  const auto& Av = tp.value(a);
                  const auto& Bv = tp.value(b);
                  const auto& Wv = tp.value(w);
                  Matrix<Real> ga = Matrix<Real>::Zero(Av.rows(), g.cols());
                  Matrix<Real> gb = Matrix<Real>::Zero(Bv.rows(), g.cols());
                  for (Index p = 0; p < g.rows(); ++p) {
                    ga.row(static_cast<Index>(ka[static_cast<std::size_t>(p)])) += g.row(p);
                    gb.row(static_cast<Index>(kb[static_cast<std::size_t>(p)])) += g.row(p);
                  }
                  if (tp.requires_grad(a)) tp.accumulate(a, ga * Wv.leftCols(in_a));
                  if (tp.requires_grad(b)) tp.accumulate(b, gb * Wv.rightCols(in_b));
                  if (tp.requires_grad(w)) {
                    Matrix<Real> gw(Wv.rows(), Wv.cols());
                    gw.leftCols(in_a) = ga.transpose() * Av;
                    gw.rightCols(in_b) = gb.transpose() * Bv;
                    tp.accumulate(w, gw);
                  }
                  if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
                });
}

/// ReLU with subgradient 0 at exactly 0.
template <class Real>
Var relu(Tape<Real>& t, Var x) {
  const auto& X = t.value(x);
  t.note_relu(X);
  Matrix<Real> y = X.cwiseMax(Real(0));
  return t.push(std::move(y), "relu", {x}, [x](Tape<Real>& tp, const Matrix<Real>& g) {
    const auto& Xv = tp.value(x);
    tp.accumulate(x, (Xv.array() > Real(0)).select(g, Real(0)).matrix());
  });
}

template <class Real>
Var concat_cols(Tape<Real>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::require(A.rows() == B.rows(), "concat_cols: row count mismatch");
  Matrix<Real> y(A.rows(), A.cols() + B.cols());
  y << A, B;
  const Index ca = A.cols();
  const Index cb = B.cols();
  return t.push(std::move(y), "concat_cols", {a, b},
                [a, b, ca, cb](Tape<Real>& tp, const Matrix<Real>& g) {
                  tp.accumulate(a, g.leftCols(ca));
                  tp.accumulate(b, g.rightCols(cb));
                });
}

template <class Real>
Var gather_rows(Tape<Real>& t, Var x, std::span<const std::size_t> idx) {
  const auto& X = t.value(x);
  Matrix<Real> y(static_cast<Index>(idx.size()), X.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    detail::require(static_cast<Index>(idx[r]) < X.rows(), "gather_rows: index out of range");
    y.row(static_cast<Index>(r)) = X.row(static_cast<Index>(idx[r]));
  }
  std::vector<std::size_t> keep(idx.begin(), idx.end());
  return t.push(std::move(y), "gather_rows", {x},
                [x, keep = std::move(keep)](Tape<Real>& tp, const Matrix<Real>& g) {
                  const auto& Xv = tp.value(x);
                  Matrix<Real> gx = Matrix<Real>::Zero(Xv.rows(), Xv.cols());
                  for (std::size_t r = 0; r < keep.size(); ++r) {
                    gx.row(static_cast<Index>(keep[r])) += g.row(static_cast<Index>(r));
                  }
                  tp.accumulate(x, gx);
                });
}

/// Picks scalar entries by flat row-major index into a k x 1 column.
template <class Real>
Var gather_elems(Tape<Real>& t, Var x, std::span<const std::size_t> flat) {
  const auto& X = t.value(x);
  Matrix<Real> y(static_cast<Index>(flat.size()), 1);
  for (std::size_t k = 0; k < flat.size(); ++k) {
    detail::require(static_cast<Index>(flat[k]) < X.size(), "gather_elems: index out of range");
    y(static_cast<Index>(k), 0) = X.data()[flat[k]];
  }
  std::vector<std::size_t> keep(flat.begin(), flat.end());
  return t.push(std::move(y), "gather_elems", {x},
                [x, keep = std::move(keep)](Tape<Real>& tp, const Matrix<Real>& g) {
                  const auto& Xv = tp.value(x);
                  Matrix<Real> gx = Matrix<Real>::Zero(Xv.rows(), Xv.cols());
                  for (std::size_t k = 0; k < keep.size(); ++k) {
                    gx.data()[keep[k]] += g(static_cast<Index>(k), 0);
                  }
                  tp.accumulate(x, gx);
                });
}

/// Clamps elementwise; gradient passes only strictly inside (lo, hi).
template <class Real>
Var clamp(Tape<Real>& t, Var x, Real lo, Real hi) {
  Matrix<Real> y = t.value(x).cwiseMax(lo).cwiseMin(hi);
  return t.push(std::move(y), "clamp", {x}, [x, lo, hi](Tape<Real>& tp, const Matrix<Real>& g) {
    const auto& Xv = tp.value(x).array();
    tp.accumulate(x, ((Xv > lo) && (Xv < hi)).select(g, Real(0)).matrix());
  });
}

template <class Real>
Var exp(Tape<Real>& t, Var x) {
  Matrix<Real> y = t.value(x).array().exp().matrix();
  const Var out{t.size()};
  return t.push(std::move(y), "exp", {x}, [x, out](Tape<Real>& tp, const Matrix<Real>& g) {
    tp.accumulate(x, g.cwiseProduct(tp.value(out)));
  });
}

template <class Real>
Var add(Tape<Real>& t, Var a, Var b) {
  detail::require_same_shape(t, a, b, "add");
  return t.push(t.value(a) + t.value(b), "add", {a, b},
                [a, b](Tape<Real>& tp, const Matrix<Real>& g) {
                  tp.accumulate(a, g);
                  tp.accumulate(b, g);
                });
}

template <class Real>
Var sub(Tape<Real>& t, Var a, Var b) {
  detail::require_same_shape(t, a, b, "sub");
  return t.push(t.value(a) - t.value(b), "sub", {a, b},
                [a, b](Tape<Real>& tp, const Matrix<Real>& g) {
                  tp.accumulate(a, g);
                  tp.accumulate(b, -g);
                });
}

template <class Real>
Var mul(Tape<Real>& t, Var a, Var b) {
  detail::require_same_shape(t, a, b, "mul");
  return t.push(t.value(a).cwiseProduct(t.value(b)), "mul", {a, b},
                [a, b](Tape<Real>& tp, const Matrix<Real>& g) {
                  if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
                  if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
                });
}

template <class Real>
Var scale(Tape<Real>& t, Var x, Real c) {
  return t.push(t.value(x) * c, "scale", {x},
                [x, c](Tape<Real>& tp, const Matrix<Real>& g) { tp.accumulate(x, g * c); });
}

template <class Real>
Var add_scalar(Tape<Real>& t, Var x, Real c) {
  Matrix<Real> y = (t.value(x).array() + c).matrix();
  return t.push(std::move(y), "add_scalar", {x},
                [x](Tape<Real>& tp, const Matrix<Real>& g) { tp.accumulate(x, g); });
}

/// Sum over columns: n x m -> n x 1.
template <class Real>
Var row_sum(Tape<Real>& t, Var x) {
  Matrix<Real> y = t.value(x).rowwise().sum();
  const Index cols = t.value(x).cols();
  return t.push(std::move(y), "row_sum", {x}, [x, cols](Tape<Real>& tp, const Matrix<Real>& g) {
    tp.accumulate(x, g.replicate(1, cols));
  });
}

template <class Real>
Var row_mean(Tape<Real>& t, Var x) {
  const Index cols = t.value(x).cols();
  detail::require(cols > 0, "row_mean: no columns");
  return scale(t, row_sum(t, x), Real(1) / static_cast<Real>(cols));
}

template <class Real>
Var sum_all(Tape<Real>& t, Var x) {
  Matrix<Real> y(1, 1);
  y(0, 0) = t.value(x).sum();
  return t.push(std::move(y), "sum_all", {x}, [x](Tape<Real>& tp, const Matrix<Real>& g) {
    const auto& Xv = tp.value(x);
    tp.accumulate(x, Matrix<Real>::Constant(Xv.rows(), Xv.cols(), g(0, 0)));
  });
}

template <class Real>
Var mean_all(Tape<Real>& t, Var x) {
  const Index n = t.value(x).size();
  detail::require(n > 0, "mean_all: empty input");
  return scale(t, sum_all(t, x), Real(1) / static_cast<Real>(n));
}

/// Elementwise log(1 + e^x), stable form.
template <class Real>
Var softplus(Tape<Real>& t, Var x) {
  Matrix<Real> y = t.value(x).unaryExpr([](Real v) { return stable_softplus(v); });
  return t.push(std::move(y), "softplus", {x}, [x](Tape<Real>& tp, const Matrix<Real>& g) {
    const Matrix<Real> sig = tp.value(x).unaryExpr([](Real v) { return logistic(v); });
    tp.accumulate(x, g.cwiseProduct(sig));
  });
}

/// Log-sum-exp over contiguous segments of a k x 1 column. `offsets` holds
/// s + 1 boundaries; segment j spans [offsets[j], offsets[j+1]).
template <class Real>
Var segment_lse(Tape<Real>& t, Var v, std::span<const std::size_t> offsets) {
  const auto& V = t.value(v);
  detail::require(V.cols() == 1, "segment_lse: expects a column");
  detail::require(!offsets.empty() && offsets.back() == static_cast<std::size_t>(V.rows()),
                  "segment_lse: offsets do not cover input");
  const std::size_t segments = offsets.size() - 1;
  Matrix<Real> y(static_cast<Index>(segments), 1);
  for (std::size_t s = 0; s < segments; ++s) {
    detail::require(offsets[s + 1] > offsets[s], "segment_lse: empty segment");
    y(static_cast<Index>(s), 0) = stable_lse(std::span<const Real>(
        V.data() + offsets[s], offsets[s + 1] - offsets[s]));
  }
  std::vector<std::size_t> keep(offsets.begin(), offsets.end());
  const Var out{t.size()};
  return t.push(std::move(y), "segment_lse", {v},
                [v, out, keep = std::move(keep)](Tape<Real>& tp, const Matrix<Real>& g) {
                  const auto& Vv = tp.value(v);
                  const auto& Y = tp.value(out);
                  Matrix<Real> gv(Vv.rows(), 1);
                  for (std::size_t s = 0; s + 1 < keep.size(); ++s) {
                    for (std::size_t k = keep[s]; k < keep[s + 1]; ++k) {
                      const auto r = static_cast<Index>(k);
                      gv(r, 0) = g(static_cast<Index>(s), 0) *
                                 std::exp(Vv(r, 0) - Y(static_cast<Index>(s), 0));
                    }
                  }
                  tp.accumulate(v, gv);
                });
}

/// Pairwise cosine similarities of rows: A n x d, B m x d -> n x m.
template <class Real>
Var cosine_matrix(Tape<Real>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::require(A.cols() == B.cols(), "cosine_matrix: width mismatch");
  const Real eps = static_cast<Real>(kCosineEps);
  const Matrix<Real> an = A.rowwise().norm();
  const Matrix<Real> bn = B.rowwise().norm();
  const Matrix<Real> ad = an.cwiseMax(eps);
  const Matrix<Real> bd = bn.cwiseMax(eps);
  const Matrix<Real> dots = A * B.transpose();
  Matrix<Real> y = dots.array() / (ad * bd.transpose()).array();
  const Var out{t.size()};
  return t.push(std::move(y), "cosine_matrix", {a, b},
                [a, b, out, an, bn, ad, bd, eps](Tape<Real>& tp, const Matrix<Real>& g) {
                  const auto& Av = tp.value(a);
                  const auto& Bv = tp.value(b);
                  const auto& S = tp.value(out);
                  // d s_ij / d a_i = b_j / (|a_i||b_j|) - s_ij a_i / |a_i|^2 (norm above eps).
                  const Matrix<Real> gs = g.array() / (ad * bd.transpose()).array();
                  const Matrix<Real> gss = g.cwiseProduct(S);
                  if (tp.requires_grad(a)) {
                    Matrix<Real> ga = gs * Bv;
                    for (Index i = 0; i < Av.rows(); ++i) {
                      if (an(i, 0) > eps) {
                        ga.row(i) -= gss.row(i).sum() * Av.row(i) / (an(i, 0) * an(i, 0));
                      }
                    }
                    tp.accumulate(a, ga);
                  }
                  if (tp.requires_grad(b)) {
                    Matrix<Real> gb = gs.transpose() * Av;
                    for (Index j = 0; j < Bv.rows(); ++j) {
                      if (bn(j, 0) > eps) {
                        gb.row(j) -= gss.col(j).sum() * Bv.row(j) / (bn(j, 0) * bn(j, 0));
                      }
                    }
                    tp.accumulate(b, gb);
                  }
                });
}

/// Per-row softmax cross-entropy against target columns: n x m -> n x 1,
/// evaluated as log sum exp(l - max) + (max - l_target).
template <class Real>
Var row_cross_entropy(Tape<Real>& t, Var logits, std::span<const std::size_t> targets) {
  const auto& L = t.value(logits);
  detail::require(static_cast<Index>(targets.size()) == L.rows(),
                  "row_cross_entropy: one target per row required");
  Matrix<Real> y(L.rows(), 1);
  for (Index i = 0; i < L.rows(); ++i) {
    const auto ti = static_cast<Index>(targets[static_cast<std::size_t>(i)]);
    detail::require(ti < L.cols(), "row_cross_entropy: target index out of range");
    const Real m = L.row(i).maxCoeff();
    y(i, 0) = std::log((L.row(i).array() - m).exp().sum()) + (m - L(i, ti));
  }
  std::vector<std::size_t> keep(targets.begin(), targets.end());
  return t.push(std::move(y), "row_cross_entropy", {logits},
                [logits, keep = std::move(keep)](Tape<Real>& tp, const Matrix<Real>& g) {
                  const auto& Lv = tp.value(logits);
                  Matrix<Real> gl(Lv.rows(), Lv.cols());
                  for (Index i = 0; i < Lv.rows(); ++i) {
                    const Real m = Lv.row(i).maxCoeff();
                    const auto e = (Lv.row(i).array() - m).exp();
                    gl.row(i) = (e / e.sum()).matrix() * g(i, 0);
                    gl(i, static_cast<Index>(keep[static_cast<std::size_t>(i)])) -= g(i, 0);
                  }
                  tp.accumulate(logits, gl);
                });
}

/// Copies the value and blocks gradient flow.
template <class Real>
Var stop_gradient(Tape<Real>& t, Var x) {
  return t.constant(t.value(x), "stop_gradient");
}

}  // namespace scale::ad
