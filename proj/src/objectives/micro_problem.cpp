// SPDX-License-Identifier: Apache-2.0
#include "objectives/micro_problem.hpp"

#include "common/rng.hpp"
#include "condnet/condnet.hpp"

namespace scale {

MicroProblem::MicroProblem(std::uint64_t seed) : model_(ModelDims{kDs, kDt, kDc, kDz}) {
  Rng rng(seed);
  model_.init(rng);
  // Fixed batch: each class appears at least once.
  const std::size_t targets[kBatch] = {0, 1, 2, 0, 1};
  batch_.features.resize(kBatch, kDs);
  for (Eigen::Index i = 0; i < batch_.features.size(); ++i) batch_.features.data()[i] = rng.normal();
  batch_.targets.assign(targets, targets + kBatch);
  batch_.text_global.resize(kClasses, kDt);
  batch_.text_pooled.resize(kClasses, kDt);
  for (std::size_t c = 0; c < kClasses; ++c) {
    for (std::size_t j = 0; j < kDt; ++j) batch_.text_global(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = rng.normal();
    const auto len = static_cast<std::size_t>(rng.uniform_int(1, 4));
    std::vector<float> tokens(len * kDt);
    for (std::size_t r = 0; r < len; ++r) {
      for (std::size_t j = 0; j < kDt; ++j) {
        tokens[r * kDt + j] = static_cast<float>(batch_.text_global(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) + rng.normal());
      }
    }
    batch_.text_pooled.row(static_cast<Eigen::Index>(c)) = pool_tokens<double>(tokens, len, kDt);
  }
  batch_.similarity.resize(kClasses * kClasses);
  for (std::size_t a = 0; a < kClasses; ++a) {
    for (std::size_t b = 0; b < kClasses; ++b) {
      const Matrix<double> ra = batch_.text_global.row(static_cast<Eigen::Index>(a));
      const Matrix<double> rb = batch_.text_global.row(static_cast<Eigen::Index>(b));
      batch_.similarity[a * kClasses + b] = cosine_sim<double>({ra.data(), kDt}, {rb.data(), kDt});
    }
  }
  eps_.resize(static_cast<Eigen::Index>(kBatch * kClasses), kDz);
  for (Eigen::Index i = 0; i < eps_.size(); ++i) eps_.data()[i] = rng.normal();

  for (auto* p : model_.params()) {
    groups_.push_back(Group{p->name, count_, p->size()});
    count_ += p->size();
  }
  Tape<double> t;
  const ObjectiveVars<double> v = batch_objective(t, model_, batch_, hyper_, kBeta, eps_);
  frozen_u_ = t.value(v.uncertainty);
}

std::vector<double> MicroProblem::params() const {
  std::vector<double> out;
  out.reserve(count_);
  for (auto* p : const_cast<ScaleModel<double>&>(model_).params()) {
    out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
  }
  return out;
}

void MicroProblem::load(std::span<const double> params) {
  if (params.size() != count_) throw ValidationError("micro problem: parameter vector has wrong length");
  std::size_t offset = 0;
  for (auto* p : model_.params()) {
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(offset),
              params.begin() + static_cast<std::ptrdiff_t>(offset + p->size()), p->value.data());
    offset += p->size();
  }
}

MicroProblem::Evaluation MicroProblem::run(Tape<double>& t, Var& total) {
  const ObjectiveVars<double> v = batch_objective(t, model_, batch_, hyper_, kBeta, eps_, &frozen_u_);
  total = v.total;
  return Evaluation{t.value(v.total)(0, 0), t.min_abs_preactivation(), t.relu_signature()};
}

MicroProblem::Evaluation MicroProblem::loss(std::span<const double> params) {
  load(params);
  Tape<double> t;
  Var total;
  return run(t, total);
}

MicroProblem::Evaluation MicroProblem::gradient(std::span<const double> params, std::span<double> grad) {
  if (grad.size() != count_) throw ValidationError("micro problem: gradient buffer has wrong length");
  load(params);
  Tape<double> t;
  Var total;
  const Evaluation e = run(t, total);
  model_.zero_grad();
  t.backward(total);
  std::size_t offset = 0;
  for (auto* p : model_.params()) {
    std::copy(p->grad.data(), p->grad.data() + p->grad.size(), grad.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p->size();
  }
  return e;
}

}  // namespace scale
