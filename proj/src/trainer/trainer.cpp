// SPDX-License-Identifier: Apache-2.0
#include "trainer/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "condnet/condnet.hpp"
#include "trainer/schedule.hpp"

namespace scale {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw ValidationError("train: lr must be > 0");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw ValidationError("train: weight_decay must be >= 0");
  if (batch_size < 2) throw ValidationError("train: batch_size must be >= 2");
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (beta_cycles < 1) throw ValidationError("train: beta_cycles must be >= 1");
  if (!(beta_max >= 0 && beta_max <= 1)) throw ValidationError("train: beta_max must lie in [0, 1]");
  ModelDims{1, 1, d_c, d_z}.validate();
  hyper.validate();
}

std::string metrics_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["loss_total"] = m.loss_total;
  j["neg_elbo"] = m.neg_elbo;
  j["l_scale"] = m.l_scale;
  j["l_proto"] = m.l_proto;
  j["mean_u"] = m.mean_u;
  j["beta"] = m.beta;
  j["lr"] = m.lr;
  return j.dump();
}

ModelState ModelState::fresh(std::size_t d_s, std::size_t d_t, const TrainConfig& config) {
  config.validate();
  ModelState s;
  s.config = config;
  s.rng = Rng(config.seed);
  s.model = ScaleModel<float>(ModelDims{d_s, d_t, config.d_c, config.d_z});
  s.model.init(s.rng);
  s.optimizer.ensure_moments(s.model.params());
  return s;
}

std::size_t steps_per_epoch(std::size_t train_samples, std::size_t batch_size) {
  return (train_samples + batch_size - 1) / batch_size;
}

namespace {

struct TextCache {
  std::map<std::uint32_t, Matrix<float>> pooled;
  std::vector<double> similarity;  // C x C over all classes, filled for seen pairs
  std::size_t classes = 0;
};

TextCache build_text_cache(const FeatureBank& bank) {
  TextCache cache;
  cache.classes = bank.num_classes();
  cache.similarity.assign(cache.classes * cache.classes, 0.0);
  for (auto a : bank.seen) {
    cache.pooled[a] = pool_tokens<float>(bank.token_block(a), bank.token_lengths[a], bank.d_t);
    for (auto b : bank.seen) {
      cache.similarity[a * cache.classes + b] = semantic_similarity(bank.text_global_row(a), bank.text_global_row(b));
    }
  }
  return cache;
}

BatchInputs<float> assemble_batch(const FeatureBank& bank, const TextCache& cache, std::span<const std::size_t> rows,
                                  const TrainOptions& options) {
  std::vector<std::uint32_t> classes;
  for (auto r : rows) classes.push_back(bank.labels[r]);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  BatchInputs<float> in;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto b = static_cast<Eigen::Index>(classes.size());
  in.features.resize(n, static_cast<Eigen::Index>(bank.d_s));
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t r = rows[static_cast<std::size_t>(i)];
    if (options.on_feature_row) options.on_feature_row(r);
    const auto row = bank.feature_row(r);
    for (std::size_t j = 0; j < bank.d_s; ++j) in.features(i, static_cast<Eigen::Index>(j)) = row[j];
    const auto pos = std::lower_bound(classes.begin(), classes.end(), bank.labels[r]) - classes.begin();
    in.targets.push_back(static_cast<std::size_t>(pos));
  }
  in.text_global.resize(b, static_cast<Eigen::Index>(bank.d_t));
  in.text_pooled.resize(b, static_cast<Eigen::Index>(bank.d_t));
  in.similarity.resize(classes.size() * classes.size());
  for (Eigen::Index k = 0; k < b; ++k) {
    const auto y = classes[static_cast<std::size_t>(k)];
    const auto h = bank.text_global_row(y);
    for (std::size_t j = 0; j < bank.d_t; ++j) in.text_global(k, static_cast<Eigen::Index>(j)) = h[j];
    in.text_pooled.row(k) = cache.pooled.at(y);
    for (std::size_t m = 0; m < classes.size(); ++m) {
      in.similarity[static_cast<std::size_t>(k) * classes.size() + m] =
          cache.similarity[y * cache.classes + classes[m]];
    }
  }
  return in;
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << line << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

TrainResult train(const FeatureBank& bank, const TrainConfig& config, const fs::path& out_dir,
                  const TrainOptions& options, std::optional<ModelState> resume) {
  bank.validate();
  config.validate();

  std::vector<std::size_t> train_rows;
  for (std::size_t i = 0; i < bank.num_samples(); ++i) {
    if (bank.is_seen(bank.labels[i])) train_rows.push_back(i);
  }
  if (train_rows.empty()) throw ValidationError("train: seen partition is empty");

  TrainResult result;
  if (resume) {
    if (!(resume->config == config)) throw ValidationError("train: checkpoint was trained with a different config");
    if (resume->model.dims.d_s != bank.d_s || resume->model.dims.d_t != bank.d_t) {
      throw ValidationError("train: checkpoint dimensions do not match the bank");
    }
    result.state = std::move(*resume);
  } else {
    result.state = ModelState::fresh(bank.d_s, bank.d_t, config);
  }
  ModelState& st = result.state;

  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());
  }

  const TextCache cache = build_text_cache(bank);
  const std::size_t per_epoch = steps_per_epoch(train_rows.size(), config.batch_size);
  const std::size_t total_steps = per_epoch * config.epochs;
  const auto params = st.model.params();
  st.optimizer.ensure_moments(params);
  const std::size_t d_z = config.d_z;

  for (std::size_t epoch = st.epoch; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = train_rows;
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(st.rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const BatchInputs<float> in = assemble_batch(bank, cache, rows, options);

      const std::size_t pairs = in.targets.size() * static_cast<std::size_t>(in.text_global.rows());
      Matrix<float> eps(static_cast<Eigen::Index>(pairs), static_cast<Eigen::Index>(d_z));
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<float>(st.rng.normal());

      const double beta = beta_schedule(st.step, total_steps, config.beta_cycles, config.beta_max);
      const double lr = lr_schedule(st.step, total_steps, config.lr);

      Tape<float> tape;
      ObjectiveVars<float> vars;
      try {
        vars = batch_objective(tape, st.model, in, config.hyper, static_cast<float>(beta), eps);
        if (options.check_invariants && tape.value(vars.kl).minCoeff() < -1e-4f) {
          throw NumericError("negative KL encountered");
        }
        st.model.zero_grad();
        tape.backward(vars.total);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(st.step) + ": " + e.what());
      }
      st.optimizer.step(params, lr, config.weight_decay, st.step + 1);
      for (auto* p : params) {
        if (!p->value.allFinite()) {
          throw NumericError("training aborted at step " + std::to_string(st.step) + ": parameter " + p->name +
                             " became non-finite");
        }
      }

      m.loss_total += tape.value(vars.total)(0, 0);
      m.neg_elbo += tape.value(vars.neg_elbo)(0, 0);
      m.l_scale += tape.value(vars.weighted_scale)(0, 0);
      m.l_proto += tape.value(vars.weighted_proto)(0, 0);
      m.mean_u += tape.value(vars.uncertainty).mean();
      m.beta = beta;
      m.lr = lr;
      ++st.step;
    }
    const auto batches = static_cast<double>(per_epoch);
    m.loss_total /= batches;
    m.neg_elbo /= batches;
    m.l_scale /= batches;
    m.l_proto /= batches;
    m.mean_u /= batches;
    st.epoch = static_cast<std::uint32_t>(epoch + 1);
    result.metrics.push_back(m);

    if (!out_dir.empty()) {
      append_line(out_dir / "metrics.jsonl", metrics_json_line(m));
      save_checkpoint(st, out_dir / "checkpoint.scl");
    }
    if (options.stop_after_epoch && st.epoch >= *options.stop_after_epoch) break;
  }
  return result;
}

}  // namespace scale
