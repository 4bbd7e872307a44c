// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "model/model.hpp"
#include "objectives/objectives.hpp"

namespace scale {

/// A seeded float64 instance of the full training objective, small enough
/// for coordinate-wise finite differences: D_s=6, D_t=8, D_c=8, D_z=4,
/// three seen classes, batch of five.
class MicroProblem {
 public:
  static constexpr std::size_t kDs = 6;
  static constexpr std::size_t kDt = 8;
  static constexpr std::size_t kDc = 8;
  static constexpr std::size_t kDz = 4;
  static constexpr std::size_t kClasses = 3;
  static constexpr std::size_t kBatch = 5;
  static constexpr double kBeta = 0.7;

  struct Group {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  struct Evaluation {
    double loss = 0;
    double min_abs_preactivation = 0;
    std::uint64_t relu_signature = 0;
  };

  explicit MicroProblem(std::uint64_t seed);

  std::size_t param_count() const { return count_; }
  const std::vector<Group>& groups() const { return groups_; }
  std::vector<double> params() const;

  /// Loss at `params`, with the uncertainty term frozen at its value for the
  /// initial parameters (it is detached from the gradient).
  Evaluation loss(std::span<const double> params);

  /// Loss and reverse-mode gradient at `params`.
  Evaluation gradient(std::span<const double> params, std::span<double> grad);

  const BatchInputs<double>& batch() const { return batch_; }
  const ScaleHyper& hyper() const { return hyper_; }
  const Matrix<double>& eps() const { return eps_; }
  ScaleModel<double>& model() { return model_; }

 private:
  void load(std::span<const double> params);
  Evaluation run(Tape<double>& t, Var& total);

  ScaleModel<double> model_;
  BatchInputs<double> batch_;
  ScaleHyper hyper_;
  Matrix<double> eps_;
  Matrix<double> frozen_u_;
  std::vector<Group> groups_;
  std::size_t count_ = 0;
};

}  // namespace scale
