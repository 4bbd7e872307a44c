// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "databank/bank.hpp"
#include "model/model.hpp"
#include "objectives/objectives.hpp"
#include "trainer/adamw.hpp"

namespace scale {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-3;
  std::size_t batch_size = 256;
  std::size_t epochs = 100;
  std::size_t beta_cycles = 4;
  double beta_max = 1.0;
  std::uint64_t seed = 0;
  ScaleHyper hyper;
  std::size_t d_z = 64;
  std::size_t d_c = 256;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// One metrics.jsonl record. l_scale and l_proto are the lambda-weighted
/// contributions, so loss_total == neg_elbo + l_scale + l_proto per step.
struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_total = 0;
  double neg_elbo = 0;
  double l_scale = 0;
  double l_proto = 0;
  double mean_u = 0;
  double beta = 0;
  double lr = 0;

  bool operator==(const EpochMetrics&) const = default;
};

std::string metrics_json_line(const EpochMetrics& m);

/// Everything needed to continue training bitwise: parameters, Adam moments,
/// step/epoch counters, the RNG stream and the config it was trained with.
struct ModelState {
  ScaleModel<float> model;
  AdamW optimizer;
  std::uint64_t step = 0;
  std::uint32_t epoch = 0;  // completed epochs
  Rng rng;
  TrainConfig config;

  /// Seeds the RNG from config.seed and initializes every network from it.
  static ModelState fresh(std::size_t d_s, std::size_t d_t, const TrainConfig& config);
};

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

struct TrainOptions {
  /// Called with the bank row index before every feature row read.
  std::function<void(std::size_t)> on_feature_row;
  /// Stop after this many completed epochs (simulated interruption).
  std::optional<std::size_t> stop_after_epoch;
  /// Assert KL >= 0 on every pair of every step.
  bool check_invariants = false;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochMetrics> metrics;
};

/// Trains on the seen-class samples of `bank`. When `out_dir` is non-empty,
/// appends one line per epoch to out_dir/metrics.jsonl and rewrites
/// out_dir/checkpoint.scl after every epoch. `resume` continues a run from a
/// checkpoint taken with the same config.
TrainResult train(const FeatureBank& bank, const TrainConfig& config, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {}, std::optional<ModelState> resume = std::nullopt);

/// Batches per epoch and total optimizer steps for a given training set size.
std::size_t steps_per_epoch(std::size_t train_samples, std::size_t batch_size);

}  // namespace scale
