// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "databank/bank.hpp"
#include "model/model.hpp"

namespace scale {

enum class Partition { kUnseenTest, kSeenHoldout };

struct EnergyEntry {
  double elbo = 0;
  double recon_logprob = 0;
  double kl = 0;
  double energy = 0;
  bool operator==(const EnergyEntry&) const = default;
};

/// Per-sample, per-candidate ELBO breakdown; rows are sample-major with
/// candidates in `candidates` order.
struct EnergyTable {
  std::vector<std::uint32_t> candidates;
  std::vector<std::uint32_t> sample_ids;
  std::vector<std::uint32_t> true_labels;
  std::vector<std::uint32_t> predictions;
  std::vector<EnergyEntry> entries;  // sample_ids.size() x candidates.size()

  const EnergyEntry& at(std::size_t sample, std::size_t candidate) const {
    return entries[sample * candidates.size() + candidate];
  }
  bool operator==(const EnergyTable&) const = default;
};

/// Text-side quantities for a fixed candidate set, computed once: the
/// conditioning vectors c_y and the priors.
struct CandidateCache {
  std::vector<std::uint32_t> candidates;
  Matrix<float> conditioning;  // m x d_c
  Matrix<float> prior_mu;      // m x d_z
  Matrix<float> prior_log_var; // m x d_z
};

CandidateCache build_candidate_cache(const ScaleModel<float>& model, const FeatureBank& bank,
                                     std::span<const std::uint32_t> candidates);

/// argmax over candidates of ELBO(x, c_y) with beta = 1 and z = mu_q. Ties go
/// to the lowest class index. Consumes no randomness.
struct Prediction {
  std::uint32_t label = 0;
  std::vector<EnergyEntry> row;  // one per candidate, cache order
};

Prediction predict(const ScaleModel<float>& model, const CandidateCache& cache, std::span<const float> x);

/// Scores a block of samples against every cached candidate in one pass.
std::vector<Prediction> predict_batch(const ScaleModel<float>& model, const CandidateCache& cache,
                                      const Matrix<float>& features);

struct EvalResult {
  double accuracy = 0;
  EnergyTable table;
};

/// Top-1 accuracy over the partition's samples with candidates restricted to
/// the partition's classes. `threads` <= 1 runs serially.
EvalResult evaluate(const ScaleModel<float>& model, const FeatureBank& bank, Partition partition,
                    std::size_t threads = 1);

void export_energies(const EnergyTable& table, const std::filesystem::path& path);
EnergyTable import_energies(const std::filesystem::path& path);

}  // namespace scale
