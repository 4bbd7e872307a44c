// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <string>

namespace scale {

/// Seeded random stream used by synthesis and training.
///
/// Wraps std::mt19937_64 but derives uniforms, normals and bounded integers by
/// hand so the sequence is identical across standard libraries and the state
/// is fully captured by the engine (no cached second normal).
///
/// Every raw engine draw bumps a process-wide counter; the inference path is
/// required to leave it untouched.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() {
    global_draws_.fetch_add(1, std::memory_order_relaxed);
    ++draws_;
    return engine_();
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes two engine draws.
  double normal();

  /// Uniform integer in [lo, hi], rejection sampled.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  std::uint64_t draws() const noexcept { return draws_; }

  std::string serialize() const;
  void deserialize(const std::string& state);

  static std::uint64_t global_draws() noexcept {
    return global_draws_.load(std::memory_order_relaxed);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
  static inline std::atomic<std::uint64_t> global_draws_{0};
};

}  // namespace scale
