// SPDX-License-Identifier: Apache-2.0
#include "databank/bank.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "common/error.hpp"

namespace scale {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_value(T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  std::reverse(std::begin(bytes), std::end(bytes));
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

template <class T>
void write_array(const fs::path& path, const std::vector<T>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (T v : values) {
      const T le = byteswap_value(v);
      out.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

template <class T>
std::vector<T> read_array(const fs::path& path, std::size_t expected_count) {
  if (!fs::exists(path)) throw IoError("missing file " + path.string());
  const auto bytes = fs::file_size(path);
  const auto expected = expected_count * sizeof(T);
  if (bytes != expected) {
    throw ValidationError(path.filename().string() + ": dimension mismatch, manifest implies " +
                          std::to_string(expected) + " bytes (" + std::to_string(expected_count) +
                          " values) but file holds " + std::to_string(bytes) + " bytes");
  }
  std::vector<T> values(expected_count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IoError("short read on " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (T& v : values) v = byteswap_value(v);
  }
  return values;
}

void check_finite(const std::vector<float>& values, const std::string& file) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ValidationError(file + ": non-finite value at element offset " + std::to_string(i) +
                            " (byte offset " + std::to_string(i * sizeof(float)) + ")");
    }
  }
}

std::vector<std::uint32_t> read_index_list(const json& manifest, const char* key) {
  if (!manifest.contains(key) || !manifest[key].is_array()) {
    throw ValidationError(std::string("manifest.json: missing array '") + key + "'");
  }
  return manifest[key].get<std::vector<std::uint32_t>>();
}

std::size_t read_count(const json& manifest, const char* key) {
  if (!manifest.contains(key) || !manifest[key].is_number_unsigned()) {
    throw ValidationError(std::string("manifest.json: missing or invalid '") + key + "'");
  }
  return manifest[key].get<std::size_t>();
}

}  // namespace

std::span<const float> FeatureBank::token_block(std::size_t c) const {
  std::size_t offset = 0;
  for (std::size_t k = 0; k < c; ++k) offset += token_lengths[k];
  return {text_tokens.data() + offset * d_t, token_lengths[c] * d_t};
}

bool FeatureBank::is_seen(std::uint32_t c) const {
  return std::find(seen.begin(), seen.end(), c) != seen.end();
}

bool FeatureBank::is_unseen(std::uint32_t c) const {
  return std::find(unseen.begin(), unseen.end(), c) != unseen.end();
}

void FeatureBank::validate() const {
  if (d_s == 0) throw ValidationError("bank: d_s must be positive");
  if (d_t == 0) throw ValidationError("bank: d_t must be positive");
  const std::size_t n = labels.size();
  const std::size_t c = class_names.size();
  if (features.size() != n * d_s) throw ValidationError("bank: features size != n_samples * d_s");
  if (text_global.size() != c * d_t) throw ValidationError("bank: text_global size != n_classes * d_t");
  if (token_lengths.size() != c) throw ValidationError("bank: token_lengths must have one entry per class");
  std::size_t total_tokens = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (token_lengths[k] < 1) {
      throw ValidationError("bank: class " + std::to_string(k) + " has token length 0 (need L_y >= 1)");
    }
    total_tokens += token_lengths[k];
  }
  if (text_tokens.size() != total_tokens * d_t) throw ValidationError("bank: text_tokens size mismatch");
  check_finite(features, "features.f32");
  check_finite(text_global, "text_global.f32");
  check_finite(text_tokens, "text_tokens.f32");

  std::set<std::uint32_t> seen_set;
  for (auto s : seen) {
    if (s >= c) throw ValidationError("bank: seen class index " + std::to_string(s) + " outside class range");
    if (!seen_set.insert(s).second) throw ValidationError("bank: duplicate seen class " + std::to_string(s));
  }
  std::set<std::uint32_t> unseen_set;
  for (auto u : unseen) {
    if (u >= c) throw ValidationError("bank: unseen class index " + std::to_string(u) + " outside class range");
    if (seen_set.count(u)) {
      throw ValidationError("bank: seen and unseen sets overlap at class " + std::to_string(u));
    }
    if (!unseen_set.insert(u).second) throw ValidationError("bank: duplicate unseen class " + std::to_string(u));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = labels[i];
    if (y >= c) {
      throw ValidationError("labels.u32: label " + std::to_string(y) + " at element offset " +
                            std::to_string(i) + " (byte offset " + std::to_string(i * 4) +
                            ") outside class range [0, " + std::to_string(c) + ")");
    }
    if (!seen_set.count(y) && !unseen_set.count(y)) {
      throw ValidationError("bank: label " + std::to_string(y) + " belongs to neither seen nor unseen classes");
    }
  }
}

void SynthSpec::validate() const {
  if (num_seen < 2) throw ValidationError("synth: num_seen must be >= 2 (got " + std::to_string(num_seen) + ")");
  if (num_unseen < 2) {
    throw ValidationError("synth: num_unseen must be >= 2 (got " + std::to_string(num_unseen) + ")");
  }
  if (d_s == 0 || d_t == 0) throw ValidationError("synth: d_s and d_t must be positive");
  if (samples_per_class == 0) throw ValidationError("synth: samples_per_class must be positive");
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw ValidationError("synth: noise_scale must be finite and >= 0");
  }
  if (mixing_rank == 0 || mixing_rank > std::min(d_s, d_t)) {
    throw ValidationError("synth: mixing_rank must be in [1, min(d_s, d_t)]");
  }
}

void save_bank(const FeatureBank& bank, const fs::path& dir) {
  bank.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create bank directory " + dir.string());

  json manifest;
  manifest["version"] = 1;
  manifest["n_samples"] = bank.num_samples();
  manifest["d_s"] = bank.d_s;
  manifest["d_t"] = bank.d_t;
  manifest["class_names"] = bank.class_names;
  manifest["seen"] = bank.seen;
  manifest["unseen"] = bank.unseen;
  manifest["token_lengths"] = bank.token_lengths;
  if (!bank.prompt_template.empty()) manifest["prompt_template"] = bank.prompt_template;

  {
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed for manifest.json");
  }
  write_array(dir / "features.f32", bank.features);
  write_array(dir / "labels.u32", bank.labels);
  write_array(dir / "text_global.f32", bank.text_global);
  write_array(dir / "text_tokens.f32", bank.text_tokens);
}

FeatureBank load_bank(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("missing file " + manifest_path.string());
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("manifest.json: " + std::string(e.what()));
  }
  static const std::set<std::string> known = {"version", "n_samples", "d_s", "d_t", "class_names",
                                              "seen", "unseen", "token_lengths", "prompt_template"};
  for (const auto& [key, _] : manifest.items()) {
    if (!known.count(key)) throw ValidationError("manifest.json: unknown key '" + key + "'");
  }
  if (read_count(manifest, "version") != 1) throw ValidationError("manifest.json: unsupported version");

  FeatureBank bank;
  const std::size_t n = read_count(manifest, "n_samples");
  bank.d_s = read_count(manifest, "d_s");
  bank.d_t = read_count(manifest, "d_t");
  if (!manifest.contains("class_names") || !manifest["class_names"].is_array()) {
    throw ValidationError("manifest.json: missing array 'class_names'");
  }
  try {
    bank.class_names = manifest["class_names"].get<std::vector<std::string>>();
    bank.seen = read_index_list(manifest, "seen");
    bank.unseen = read_index_list(manifest, "unseen");
    bank.token_lengths = read_index_list(manifest, "token_lengths");
  } catch (const json::exception& e) {
    throw ValidationError("manifest.json: " + std::string(e.what()));
  }
  if (manifest.contains("prompt_template")) bank.prompt_template = manifest["prompt_template"].get<std::string>();
  const std::size_t c = bank.class_names.size();
  if (bank.token_lengths.size() != c) {
    throw ValidationError("manifest.json: token_lengths has " + std::to_string(bank.token_lengths.size()) +
                          " entries for " + std::to_string(c) + " classes");
  }
  std::size_t total_tokens = 0;
  for (auto l : bank.token_lengths) total_tokens += l;

  bank.features = read_array<float>(dir / "features.f32", n * bank.d_s);
  bank.labels = read_array<std::uint32_t>(dir / "labels.u32", n);
  bank.text_global = read_array<float>(dir / "text_global.f32", c * bank.d_t);
  bank.text_tokens = read_array<float>(dir / "text_tokens.f32", total_tokens * bank.d_t);
  bank.validate();
  return bank;
}

}  // namespace scale
