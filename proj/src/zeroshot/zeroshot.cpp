// SPDX-License-Identifier: Apache-2.0
#include "zeroshot/zeroshot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "condnet/condnet.hpp"
#include "cvae/cvae.hpp"

namespace scale {

namespace fs = std::filesystem;

namespace {

// Parameters are only read on the inference path; the tape API takes
// mutable references because training accumulates gradients into them.
ScaleModel<float>& mutable_model(const ScaleModel<float>& m) { return const_cast<ScaleModel<float>&>(m); }

std::uint32_t argmax_lowest_index(std::span<const std::uint32_t> candidates, const std::vector<EnergyEntry>& row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k].elbo > row[best].elbo || (row[k].elbo == row[best].elbo && candidates[k] < candidates[best])) {
      best = k;
    }
  }
  return candidates[best];
}

}  // namespace

CandidateCache build_candidate_cache(const ScaleModel<float>& model, const FeatureBank& bank,
                                     std::span<const std::uint32_t> candidates) {
  if (candidates.empty()) throw ValidationError("predict: empty candidate set");
  if (bank.d_t != model.dims.d_t) throw ValidationError("predict: bank d_t does not match the model");
  const auto m = static_cast<Eigen::Index>(candidates.size());
  Matrix<float> hg(m, static_cast<Eigen::Index>(bank.d_t));
  Matrix<float> hp(m, static_cast<Eigen::Index>(bank.d_t));
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto y = candidates[static_cast<std::size_t>(k)];
    if (y >= bank.num_classes()) {
      throw ValidationError("predict: candidate class " + std::to_string(y) + " has no text arrays in the bank");
    }
    const auto h = bank.text_global_row(y);
    for (std::size_t j = 0; j < bank.d_t; ++j) hg(k, static_cast<Eigen::Index>(j)) = h[j];
    hp.row(k) = pool_tokens<float>(bank.token_block(y), bank.token_lengths[y], bank.d_t);
  }
  Tape<float> t;
  auto& params = mutable_model(model);
  const Var c = condition(t, params.cond, t.constant(hg), t.constant(hp));
  const GaussianVars pri = prior(t, params.cond, c);
  CandidateCache cache;
  cache.candidates.assign(candidates.begin(), candidates.end());
  cache.conditioning = t.value(c);
  cache.prior_mu = t.value(pri.mu);
  cache.prior_log_var = t.value(pri.log_var);
  return cache;
}

std::vector<Prediction> predict_batch(const ScaleModel<float>& model, const CandidateCache& cache,
                                      const Matrix<float>& features) {
  if (static_cast<std::size_t>(features.cols()) != model.dims.d_s) {
    throw ValidationError("predict: feature width does not match the model");
  }
  const auto n = static_cast<std::size_t>(features.rows());
  const std::size_t m = cache.candidates.size();
  std::vector<std::size_t> idx_x(n * m), idx_c(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      idx_x[i * m + k] = i;
      idx_c[i * m + k] = k;
    }
  }
  Tape<float> t;
  const Var x = t.constant(features);
  const Var c = t.constant(cache.conditioning);
  const GaussianVars pri{t.constant(cache.prior_mu), t.constant(cache.prior_log_var)};
  const ElboVars<float> ev =
      elbo_pairs(t, mutable_model(model).cvae, x, idx_x, c, idx_c, pri, 1.0f, ElboMode::kEvalMean);

  std::vector<Prediction> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].row.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
      const auto p = static_cast<Eigen::Index>(i * m + k);
      EnergyEntry& e = out[i].row[k];
      e.elbo = t.value(ev.elbo)(p, 0);
      e.recon_logprob = t.value(ev.recon)(p, 0);
      e.kl = t.value(ev.kl)(p, 0);
      e.energy = t.value(ev.energy)(p, 0);
    }
    out[i].label = argmax_lowest_index(cache.candidates, out[i].row);
  }
  return out;
}

Prediction predict(const ScaleModel<float>& model, const CandidateCache& cache, std::span<const float> x) {
  Matrix<float> row(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) row(0, static_cast<Eigen::Index>(j)) = x[j];
  return std::move(predict_batch(model, cache, row).front());
}

EvalResult evaluate(const ScaleModel<float>& model, const FeatureBank& bank, Partition partition,
                    std::size_t threads) {
  std::vector<std::uint32_t> candidates =
      partition == Partition::kUnseenTest ? bank.unseen : bank.seen;
  std::sort(candidates.begin(), candidates.end());
  std::vector<std::size_t> samples;
  for (std::size_t i = 0; i < bank.num_samples(); ++i) {
    if (std::binary_search(candidates.begin(), candidates.end(), bank.labels[i])) samples.push_back(i);
  }
  if (samples.empty() || candidates.empty()) throw ValidationError("evaluate: partition is empty");
  if (bank.d_s != model.dims.d_s) throw ValidationError("evaluate: bank d_s does not match the model");

  const CandidateCache cache = build_candidate_cache(model, bank, candidates);
  EvalResult result;
  EnergyTable& table = result.table;
  table.candidates = candidates;
  table.sample_ids.resize(samples.size());
  table.true_labels.resize(samples.size());
  table.predictions.resize(samples.size());
  table.entries.resize(samples.size() * candidates.size());

  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (samples.size() + kChunk - 1) / kChunk;
  auto run_chunk = [&](std::size_t chunk) {
    const std::size_t begin = chunk * kChunk;
    const std::size_t end = std::min(begin + kChunk, samples.size());
    Matrix<float> x(static_cast<Eigen::Index>(end - begin), static_cast<Eigen::Index>(bank.d_s));
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = bank.feature_row(samples[i]);
      for (std::size_t j = 0; j < bank.d_s; ++j) x(static_cast<Eigen::Index>(i - begin), static_cast<Eigen::Index>(j)) = row[j];
    }
    const auto preds = predict_batch(model, cache, x);
    for (std::size_t i = begin; i < end; ++i) {
      const Prediction& p = preds[i - begin];
      table.sample_ids[i] = static_cast<std::uint32_t>(samples[i]);
      table.true_labels[i] = bank.labels[samples[i]];
      table.predictions[i] = p.label;
      std::copy(p.row.begin(), p.row.end(), table.entries.begin() + static_cast<std::ptrdiff_t>(i * candidates.size()));
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, chunks));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += table.predictions[i] == table.true_labels[i];
  result.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return result;
}

void export_energies(const EnergyTable& table, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "sample_id,true_label,candidate,elbo,recon,kl,energy,predicted\n";
  char buf[256];
  for (std::size_t i = 0; i < table.sample_ids.size(); ++i) {
    for (std::size_t k = 0; k < table.candidates.size(); ++k) {
      const EnergyEntry& e = table.at(i, k);
      std::snprintf(buf, sizeof(buf), "%u,%u,%u,%.17g,%.17g,%.17g,%.17g,%u\n", table.sample_ids[i],
                    table.true_labels[i], table.candidates[k], e.elbo, e.recon_logprob, e.kl, e.energy,
                    table.predictions[i]);
      out << buf;
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

EnergyTable import_energies(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "sample_id,true_label,candidate,elbo,recon,kl,energy,predicted") {
    throw ValidationError(path.string() + ": unexpected energy CSV header");
  }
  EnergyTable table;
  std::map<std::uint32_t, std::size_t> candidate_pos;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    unsigned sample = 0, truth = 0, cand = 0, pred = 0;
    EnergyEntry e;
    if (std::sscanf(line.c_str(), "%u,%u,%u,%lf,%lf,%lf,%lf,%u", &sample, &truth, &cand, &e.elbo, &e.recon_logprob,
                    &e.kl, &e.energy, &pred) != 8) {
      throw ValidationError(path.string() + ": malformed row at line " + std::to_string(line_no));
    }
    if (table.sample_ids.empty() || table.sample_ids.back() != sample) {
      table.sample_ids.push_back(sample);
      table.true_labels.push_back(truth);
      table.predictions.push_back(pred);
    }
    if (table.sample_ids.size() == 1) table.candidates.push_back(cand);
    table.entries.push_back(e);
  }
  if (!table.candidates.empty() && table.entries.size() != table.sample_ids.size() * table.candidates.size()) {
    throw ValidationError(path.string() + ": ragged energy table");
  }
  return table;
}

}  // namespace scale
