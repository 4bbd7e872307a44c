// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "common/rng.hpp"
#include "condnet/condnet.hpp"
#include "cvae/cvae.hpp"

namespace scale {

struct ModelDims {
  std::size_t d_s = 256;
  std::size_t d_t = 512;
  std::size_t d_c = 256;
  std::size_t d_z = 64;

  void validate() const {
    if (d_s == 0 || d_t == 0 || d_z == 0) throw ValidationError("model dims must be positive");
    if (d_c < 2 || d_c % 2 != 0) throw ValidationError("d_c must be a positive even number");
  }
  bool operator==(const ModelDims&) const = default;
};

/// All five networks of the model.
template <class Real>
struct ScaleModel {
  ModelDims dims;
  CondNetParams<Real> cond;
  CvaeParams<Real> cvae;

  ScaleModel() = default;
  explicit ScaleModel(const ModelDims& d)
      : dims(d), cond(d.d_t, d.d_c, d.d_z), cvae(d.d_s, d.d_c, d.d_z) {
    d.validate();
  }

  void init(Rng& rng) {
    cond.init(rng);
    cvae.init(rng);
  }

  /// Stable order used by checkpoints, the optimizer and gradient checks.
  std::vector<ParamTensor<Real>*> params() {
    std::vector<ParamTensor<Real>*> out;
    cond.collect(out);
    cvae.collect(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  template <class Other>
  ScaleModel<Other> cast() const {
    ScaleModel<Other> out(dims);
    auto src = const_cast<ScaleModel*>(this)->params();
    auto dst = out.params();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i]->value = src[i]->value.template cast<Other>();
      dst[i]->zero_grad();
    }
    return out;
  }
};

}  // namespace scale
