// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>

#include "common/rng.hpp"
#include "databank/bank.hpp"

namespace scale {

namespace {

struct SynthDraws {
  std::vector<double> text;    // C x d_t
  std::vector<double> mixing;  // d_s x d_t, rank-limited
};

// Draw order is part of the determinism contract: class embeddings, then the
// two mixing factors, then token blocks per class, then samples class-major.
SynthDraws draw_text_and_mixing(const SynthSpec& spec, Rng& rng) {
  const std::size_t classes = spec.num_seen + spec.num_unseen;
  SynthDraws d;
  d.text.resize(classes * spec.d_t);
  // Rounded to float32 up front so class means are computed from the stored h_y.
  for (double& v : d.text) v = static_cast<float>(rng.normal());

  const std::size_t r = spec.mixing_rank;
  std::vector<double> left(spec.d_s * r);
  std::vector<double> right(r * spec.d_t);
  for (double& v : left) v = rng.normal();
  for (double& v : right) v = rng.normal();
  // Scaled so class-mean entries have unit variance.
  const double norm = 1.0 / std::sqrt(static_cast<double>(r * spec.d_t));
  d.mixing.assign(spec.d_s * spec.d_t, 0.0);
  for (std::size_t i = 0; i < spec.d_s; ++i) {
    for (std::size_t j = 0; j < spec.d_t; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < r; ++k) acc += left[i * r + k] * right[k * spec.d_t + j];
      d.mixing[i * spec.d_t + j] = acc * norm;
    }
  }
  return d;
}

}  // namespace

std::vector<double> synth_mixing_matrix(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  return draw_text_and_mixing(spec, rng).mixing;
}

FeatureBank synthesize_bank(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const SynthDraws d = draw_text_and_mixing(spec, rng);
  const std::size_t classes = spec.num_seen + spec.num_unseen;

  FeatureBank bank;
  bank.d_s = spec.d_s;
  bank.d_t = spec.d_t;
  bank.prompt_template = kPromptTemplate;
  for (std::size_t c = 0; c < classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "action_%03zu", c);
    bank.class_names.emplace_back(name);
    if (c < spec.num_seen) {
      bank.seen.push_back(static_cast<std::uint32_t>(c));
    } else {
      bank.unseen.push_back(static_cast<std::uint32_t>(c));
    }
  }
  bank.text_global.reserve(classes * spec.d_t);
  for (double v : d.text) bank.text_global.push_back(static_cast<float>(v));

  for (std::size_t c = 0; c < classes; ++c) {
    const auto len = static_cast<std::uint32_t>(rng.uniform_int(3, 8));
    bank.token_lengths.push_back(len);
    for (std::uint32_t l = 0; l < len; ++l) {
      for (std::size_t j = 0; j < spec.d_t; ++j) {
        bank.text_tokens.push_back(static_cast<float>(d.text[c * spec.d_t + j] + rng.normal()));
      }
    }
  }

  std::vector<double> mean(spec.d_s);
  bank.features.reserve(classes * spec.samples_per_class * spec.d_s);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < spec.d_s; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < spec.d_t; ++j) acc += d.mixing[i * spec.d_t + j] * d.text[c * spec.d_t + j];
      mean[i] = acc;
    }
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      for (std::size_t i = 0; i < spec.d_s; ++i) {
        bank.features.push_back(static_cast<float>(mean[i] + spec.noise_scale * rng.normal()));
      }
      bank.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  bank.validate();
  return bank;
}

}  // namespace scale
