// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scale {

inline constexpr const char* kPromptTemplate = "The Human Action of [ACTION]";

/// Pre-extracted skeleton features, per-class text embeddings and the
/// seen/unseen split. Arrays are row-major float32.
struct FeatureBank {
  std::size_t d_s = 0;
  std::size_t d_t = 0;
  std::vector<float> features;        // N x d_s
  std::vector<std::uint32_t> labels;  // N
  std::vector<std::string> class_names;
  std::vector<float> text_global;            // C x d_t
  std::vector<std::uint32_t> token_lengths;  // L_y per class
  std::vector<float> text_tokens;            // concat of L_y x d_t blocks
  std::vector<std::uint32_t> seen;
  std::vector<std::uint32_t> unseen;
  std::string prompt_template;  // metadata only, may be empty

  std::size_t num_samples() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }

  std::span<const float> feature_row(std::size_t i) const {
    return {features.data() + i * d_s, d_s};
  }
  std::span<const float> text_global_row(std::size_t c) const {
    return {text_global.data() + c * d_t, d_t};
  }
  /// The L_y x d_t token block of class c.
  std::span<const float> token_block(std::size_t c) const;

  bool is_seen(std::uint32_t c) const;
  bool is_unseen(std::uint32_t c) const;

  /// Throws ValidationError naming the first violated invariant.
  void validate() const;

  bool operator==(const FeatureBank&) const = default;
};

/// Parameters of the synthetic bank generator.
struct SynthSpec {
  std::size_t num_seen = 12;
  std::size_t num_unseen = 4;
  std::size_t d_s = 32;
  std::size_t d_t = 16;
  std::size_t samples_per_class = 50;
  double noise_scale = 0.3;
  std::size_t mixing_rank = 16;
  std::uint64_t seed = 7;

  void validate() const;
};

FeatureBank load_bank(const std::filesystem::path& dir);
void save_bank(const FeatureBank& bank, const std::filesystem::path& dir);
FeatureBank synthesize_bank(const SynthSpec& spec);

/// The synthesizer's text->feature map for `spec`, d_s x d_t row-major.
/// Exposed so tests can check that class means equal W h_y.
std::vector<double> synth_mixing_matrix(const SynthSpec& spec);

}  // namespace scale
