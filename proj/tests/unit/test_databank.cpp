// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <cmath>
#include <cstring>

#include <json.hpp>

#include <Eigen/LU>

#include "common/rng.hpp"
#include "databank/bank.hpp"

using namespace scale;
namespace fs = std::filesystem;

namespace {

FeatureBank tiny_bank() {
  FeatureBank b;
  b.d_s = 4;
  b.d_t = 8;
  b.class_names = {"wave", "jump", "sit"};
  b.labels = {0, 1, 2, 0, 1, 2};
  for (int i = 0; i < 6 * 4; ++i) b.features.push_back(0.25f * static_cast<float>(i) - 1.0f);
  for (int i = 0; i < 3 * 8; ++i) b.text_global.push_back(std::sin(static_cast<float>(i)));
  b.token_lengths = {1, 2, 3};
  for (int i = 0; i < 6 * 8; ++i) b.text_tokens.push_back(std::cos(static_cast<float>(i)));
  b.seen = {0, 1};
  b.unseen = {2};
  b.prompt_template = kPromptTemplate;
  return b;
}

FeatureBank random_bank(std::uint64_t seed) {
  Rng rng(seed);
  FeatureBank b;
  b.d_s = static_cast<std::size_t>(rng.uniform_int(1, 7));
  b.d_t = static_cast<std::size_t>(rng.uniform_int(1, 7));
  const auto c = static_cast<std::size_t>(rng.uniform_int(2, 6));
  const auto n = static_cast<std::size_t>(rng.uniform_int(0, 20));
  for (std::size_t k = 0; k < c; ++k) {
    b.class_names.push_back("c" + std::to_string(k));
    b.token_lengths.push_back(static_cast<std::uint32_t>(rng.uniform_int(1, 4)));
    (k % 2 == 0 ? b.seen : b.unseen).push_back(static_cast<std::uint32_t>(k));
  }
  std::size_t tokens = 0;
  for (auto l : b.token_lengths) tokens += l;
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<std::uint32_t>(rng.uniform_int(0, c - 1)));
  for (std::size_t i = 0; i < n * b.d_s; ++i) b.features.push_back(static_cast<float>(rng.normal() * 1e3));
  for (std::size_t i = 0; i < c * b.d_t; ++i) b.text_global.push_back(static_cast<float>(rng.normal()));
  for (std::size_t i = 0; i < tokens * b.d_t; ++i) b.text_tokens.push_back(static_cast<float>(rng.normal()));
  return b;
}

void overwrite(const fs::path& p, std::size_t offset, const void* data, std::size_t size) {
  std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

std::string error_of(const fs::path& dir) {
  try {
    load_bank(dir);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("save then load round-trips a small bank") {
  const auto dir = testutil::scratch("bank_roundtrip");
  const FeatureBank b = tiny_bank();
  save_bank(b, dir);
  const FeatureBank back = load_bank(dir);
  CHECK(back.num_samples() == 6);
  CHECK(back.num_classes() == 3);
  CHECK(back == b);
  CHECK(std::memcmp(back.features.data(), b.features.data(), b.features.size() * sizeof(float)) == 0);
}

TEST_CASE("round-trip property on random banks") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    CAPTURE(seed);
    const auto dir = testutil::scratch("bank_prop");
    const FeatureBank b = random_bank(seed);
    save_bank(b, dir);
    CHECK(load_bank(dir) == b);
  }
}

TEST_CASE("saving twice yields byte-identical directories") {
  const auto a = testutil::scratch("bank_twice_a");
  const auto b = testutil::scratch("bank_twice_b");
  const FeatureBank bank = synthesize_bank(SynthSpec{});
  save_bank(bank, a);
  save_bank(bank, b);
  CHECK(testutil::same_tree(a, b));
}

TEST_CASE("on-disk layout is little-endian raw arrays") {
  const auto dir = testutil::scratch("bank_layout");
  const FeatureBank b = tiny_bank();
  save_bank(b, dir);
  CHECK(fs::file_size(dir / "features.f32") == 6 * 4 * 4);
  CHECK(fs::file_size(dir / "labels.u32") == 6 * 4);
  CHECK(fs::file_size(dir / "text_global.f32") == 3 * 8 * 4);
  CHECK(fs::file_size(dir / "text_tokens.f32") == 6 * 8 * 4);
  const std::string labels = testutil::slurp(dir / "labels.u32");
  CHECK(static_cast<unsigned char>(labels[4]) == 1);
  CHECK(labels[5] == 0);
  const auto manifest = nlohmann::json::parse(testutil::slurp(dir / "manifest.json"));
  CHECK(manifest["version"] == 1);
  CHECK(manifest["n_samples"] == 6);
  CHECK(manifest["d_s"] == 4);
  CHECK(manifest["d_t"] == 8);
  CHECK(manifest["token_lengths"] == nlohmann::json::array({1, 2, 3}));
  CHECK(manifest["seen"] == nlohmann::json::array({0, 1}));
}

TEST_CASE("dimension mismatch is reported with the file") {
  const auto dir = testutil::scratch("bank_dim");
  save_bank(tiny_bank(), dir);
  fs::resize_file(dir / "features.f32", 6 * 4 * 4 - 4);
  const std::string msg = error_of(dir);
  CHECK(msg.find("features.f32") != std::string::npos);
  CHECK(msg.find("dimension mismatch") != std::string::npos);
}

TEST_CASE("label outside the class range is reported with its offset") {
  const auto dir = testutil::scratch("bank_label");
  save_bank(tiny_bank(), dir);
  const std::uint32_t bad = 7;
  overwrite(dir / "labels.u32", 3 * 4, &bad, 4);
  const std::string msg = error_of(dir);
  CHECK(msg.find("labels.u32") != std::string::npos);
  CHECK(msg.find("offset 3") != std::string::npos);
}

TEST_CASE("NaN is reported with file and offset") {
  const auto dir = testutil::scratch("bank_nan");
  save_bank(tiny_bank(), dir);
  const float nan = std::nanf("");
  overwrite(dir / "text_global.f32", 5 * 4, &nan, 4);
  const std::string msg = error_of(dir);
  CHECK(msg.find("text_global.f32") != std::string::npos);
  CHECK(msg.find("offset 5") != std::string::npos);
}

TEST_CASE("missing files and bad manifests are rejected") {
  const auto dir = testutil::scratch("bank_missing");
  save_bank(tiny_bank(), dir);
  fs::remove(dir / "text_tokens.f32");
  CHECK_THROWS_AS(load_bank(dir), IoError);
  CHECK_THROWS_AS(load_bank(dir / "nope"), IoError);

  save_bank(tiny_bank(), dir);
  auto manifest = nlohmann::ordered_json::parse(testutil::slurp(dir / "manifest.json"));
  manifest["surprise"] = 1;
  std::ofstream(dir / "manifest.json") << manifest.dump();
  CHECK(error_of(dir).find("unknown key") != std::string::npos);

  manifest.erase("surprise");
  manifest["version"] = 2;
  std::ofstream(dir / "manifest.json") << manifest.dump();
  CHECK(error_of(dir).find("version") != std::string::npos);
}

TEST_CASE("invalid banks are refused before any write") {
  const auto root = testutil::scratch("bank_refuse");
  FeatureBank b = tiny_bank();
  b.unseen = {1};
  CHECK_THROWS_AS(save_bank(b, root / "out"), ValidationError);
  CHECK(!fs::exists(root / "out"));

  b = tiny_bank();
  b.token_lengths[1] = 0;
  CHECK_THROWS_AS(b.validate(), ValidationError);
  b = tiny_bank();
  b.features[3] = INFINITY;
  CHECK_THROWS_AS(b.validate(), ValidationError);
  b = tiny_bank();
  b.d_s = 0;
  CHECK_THROWS_AS(b.validate(), ValidationError);
  b = tiny_bank();
  b.seen = {0};
  CHECK_THROWS_AS(b.validate(), ValidationError);  // label 1 belongs to no split
}

TEST_CASE("synthesis is deterministic") {
  SynthSpec s;
  s.seed = 123;
  CHECK(synthesize_bank(s) == synthesize_bank(s));
  SynthSpec t = s;
  t.seed = 124;
  CHECK(!(synthesize_bank(s) == synthesize_bank(t)));
}

TEST_CASE("default synthesis gives 800 samples over 16 classes") {
  const auto dir = testutil::scratch("bank_default");
  save_bank(synthesize_bank(SynthSpec{}), dir);
  const FeatureBank b = load_bank(dir);
  CHECK(b.num_samples() == 800);
  CHECK(b.num_classes() == 16);
  CHECK(b.seen.size() == 12);
  CHECK(b.unseen.size() == 4);
  CHECK(b.d_s == 32);
  CHECK(b.d_t == 16);
  for (std::uint32_t k = 0; k < 12; ++k) CHECK(b.is_seen(k));
  for (std::uint32_t k = 12; k < 16; ++k) CHECK(b.is_unseen(k));
  for (auto l : b.token_lengths) {
    CHECK(l >= 3);
    CHECK(l <= 8);
  }
  CHECK(b.prompt_template == kPromptTemplate);
}

TEST_CASE("zero noise puts every sample exactly on W h_y") {
  SynthSpec s;
  s.noise_scale = 0.0;
  s.num_seen = 3;
  s.num_unseen = 2;
  s.samples_per_class = 4;
  const FeatureBank b = synthesize_bank(s);
  const auto w = synth_mixing_matrix(s);
  for (std::size_t i = 0; i < b.num_samples(); ++i) {
    const auto y = b.labels[i];
    const auto h = b.text_global_row(y);
    const auto x = b.feature_row(i);
    for (std::size_t r = 0; r < s.d_s; ++r) {
      double mu = 0;
      for (std::size_t c = 0; c < s.d_t; ++c) mu += w[r * s.d_t + c] * h[c];
      CHECK(x[r] == static_cast<float>(mu));
    }
    if (i > 0 && b.labels[i - 1] == y) {
      CHECK(std::memcmp(x.data(), b.feature_row(i - 1).data(), s.d_s * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("mixing matrix has the requested rank") {
  SynthSpec s;
  s.d_s = 10;
  s.d_t = 8;
  s.mixing_rank = 3;
  const auto w = synth_mixing_matrix(s);
  Eigen::MatrixXd m(10, 8);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 8; ++c) m(r, c) = w[static_cast<std::size_t>(r * 8 + c)];
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  CHECK(lu.rank() == 3);
}

TEST_CASE("SynthSpec validation") {
  SynthSpec s;
  s.num_seen = 1;
  try {
    s.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(">= 2") != std::string::npos);
  }
  s = {};
  s.num_unseen = 1;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  s.mixing_rank = 17;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  s.noise_scale = -0.1;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  CHECK_THROWS_AS(synthesize_bank(s), ValidationError);
}
