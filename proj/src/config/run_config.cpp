// SPDX-License-Identifier: Apache-2.0
#include "config/run_config.hpp"

#include <set>

#include "common/error.hpp"

namespace scale {

using json = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& section) {
  if (!obj.is_object()) throw ValidationError("config: section '" + section + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw ValidationError("config: unknown key '" + section + "." + key + "'");
  }
}

template <class T>
void take(const json& obj, const char* key, T& dst, const std::string& section) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0 && !v.is_number_unsigned())) {
        throw ValidationError("config: '" + section + "." + key + "' must be a non-negative integer");
      }
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ValidationError("config: '" + section + "." + key + "' must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ValidationError("config: '" + section + "." + key + "' must be a string");
    }
    dst = v.get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config: '" + section + "." + key + "': " + e.what());
  }
}

void merge_hyper(const json& obj, ScaleHyper& h) {
  reject_unknown(obj, {"alpha", "tau", "beta_u", "gamma", "lambda_temp", "lambda1", "lambda2"}, "hyper");
  take(obj, "alpha", h.alpha, "hyper");
  take(obj, "tau", h.tau, "hyper");
  take(obj, "beta_u", h.beta_u, "hyper");
  take(obj, "gamma", h.gamma, "hyper");
  take(obj, "lambda_temp", h.lambda_temp, "hyper");
  take(obj, "lambda1", h.lambda1, "hyper");
  take(obj, "lambda2", h.lambda2, "hyper");
}

void merge_train(const json& obj, TrainConfig& t) {
  reject_unknown(obj, {"lr", "weight_decay", "batch_size", "epochs", "beta_cycles", "beta_max", "seed", "d_z", "d_c"},
                 "train");
  take(obj, "lr", t.lr, "train");
  take(obj, "weight_decay", t.weight_decay, "train");
  take(obj, "batch_size", t.batch_size, "train");
  take(obj, "epochs", t.epochs, "train");
  take(obj, "beta_cycles", t.beta_cycles, "train");
  take(obj, "beta_max", t.beta_max, "train");
  take(obj, "seed", t.seed, "train");
  take(obj, "d_z", t.d_z, "train");
  take(obj, "d_c", t.d_c, "train");
}

void merge_synth(const json& obj, SynthSpec& s) {
  reject_unknown(obj,
                 {"num_seen", "num_unseen", "d_s", "d_t", "samples_per_class", "noise_scale", "mixing_rank", "seed"},
                 "synth");
  take(obj, "num_seen", s.num_seen, "synth");
  take(obj, "num_unseen", s.num_unseen, "synth");
  take(obj, "d_s", s.d_s, "synth");
  take(obj, "d_t", s.d_t, "synth");
  take(obj, "samples_per_class", s.samples_per_class, "synth");
  take(obj, "noise_scale", s.noise_scale, "synth");
  take(obj, "mixing_rank", s.mixing_rank, "synth");
  take(obj, "seed", s.seed, "synth");
}

}  // namespace

json to_json(const SynthSpec& s) {
  json j;
  j["num_seen"] = s.num_seen;
  j["num_unseen"] = s.num_unseen;
  j["d_s"] = s.d_s;
  j["d_t"] = s.d_t;
  j["samples_per_class"] = s.samples_per_class;
  j["noise_scale"] = s.noise_scale;
  j["mixing_rank"] = s.mixing_rank;
  j["seed"] = s.seed;
  return j;
}

json to_json(const ScaleHyper& h) {
  json j;
  j["alpha"] = h.alpha;
  j["tau"] = h.tau;
  j["beta_u"] = h.beta_u;
  j["gamma"] = h.gamma;
  j["lambda_temp"] = h.lambda_temp;
  j["lambda1"] = h.lambda1;
  j["lambda2"] = h.lambda2;
  return j;
}

json to_json(const TrainConfig& t) {
  json j;
  j["lr"] = t.lr;
  j["weight_decay"] = t.weight_decay;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["beta_cycles"] = t.beta_cycles;
  j["beta_max"] = t.beta_max;
  j["seed"] = t.seed;
  j["d_z"] = t.d_z;
  j["d_c"] = t.d_c;
  j["hyper"] = to_json(t.hyper);
  return j;
}

json to_json(const RunConfig& r) {
  json j;
  j["synth"] = to_json(r.synth);
  json train = to_json(r.train);
  j["hyper"] = train["hyper"];
  train.erase("hyper");
  j["train"] = train;
  j["paths"] = json{{"data", r.data_dir}, {"out", r.out_dir}, {"checkpoint", r.checkpoint}};
  return j;
}

TrainConfig train_config_from_json(const json& doc) {
  TrainConfig t;
  json train = doc;
  if (train.contains("hyper")) {
    merge_hyper(train["hyper"], t.hyper);
    train.erase("hyper");
  }
  merge_train(train, t);
  return t;
}

RunConfig merge_run_config(const json& doc, RunConfig base) {
  reject_unknown(doc, {"synth", "train", "hyper", "paths"}, "<root>");
  if (doc.contains("synth")) merge_synth(doc["synth"], base.synth);
  if (doc.contains("train")) merge_train(doc["train"], base.train);
  if (doc.contains("hyper")) merge_hyper(doc["hyper"], base.train.hyper);
  if (doc.contains("paths")) {
    const json& p = doc["paths"];
    reject_unknown(p, {"data", "out", "checkpoint"}, "paths");
    take(p, "data", base.data_dir, "paths");
    take(p, "out", base.out_dir, "paths");
    take(p, "checkpoint", base.checkpoint, "paths");
  }
  return base;
}

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  RunConfig r = merge_run_config(doc);
  r.synth.validate();
  r.train.validate();
  return r;
}

}  // namespace scale
