// SPDX-License-Identifier: Apache-2.0
#include "scale/scale.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <optional>
#include <string>

#include "config/run_config.hpp"
#include "databank/bank.hpp"
#include "objectives/micro_problem.hpp"
#include "trainer/trainer.hpp"
#include "zeroshot/zeroshot.hpp"

struct scale_bank {
  scale::FeatureBank bank;
};

struct scale_model {
  scale::ModelState state;
};

struct scale_energy_table {
  scale::EnergyTable table;
};

struct scale_micro {
  explicit scale_micro(std::uint64_t seed) : problem(seed) {}
  scale::MicroProblem problem;
};

namespace {

thread_local std::string g_last_error;

scale_status fail(scale_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <class Fn>
scale_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return SCALE_OK;
  } catch (const scale::Error& e) {
    return fail(static_cast<scale_status>(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(SCALE_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(SCALE_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SCALE_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw scale::ValidationError(what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

scale::RunConfig resolve(const char* config_json) {
  return scale::parse_run_config(config_json ? config_json : "");
}

}  // namespace

extern "C" {

const char* scale_last_error(void) { return g_last_error.c_str(); }

const char* scale_version(void) { return "1.0.0"; }

void scale_string_free(char* s) { std::free(s); }

scale_status scale_config_resolve(const char* config_json, char** resolved_json) {
  return guarded([&] {
    require(resolved_json != nullptr, "resolved_json must not be NULL");
    *resolved_json = dup_string(scale::to_json(resolve(config_json)).dump(2));
  });
}

scale_status scale_bank_synthesize(const char* config_json, scale_bank** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be NULL");
    *out = new scale_bank{scale::synthesize_bank(resolve(config_json).synth)};
  });
}

scale_status scale_bank_load(const char* dir, scale_bank** out) {
  return guarded([&] {
    require(dir != nullptr && out != nullptr, "dir and out must not be NULL");
    *out = new scale_bank{scale::load_bank(dir)};
  });
}

scale_status scale_bank_save(const scale_bank* bank, const char* dir) {
  return guarded([&] {
    require(bank != nullptr && dir != nullptr, "bank and dir must not be NULL");
    scale::save_bank(bank->bank, dir);
  });
}

scale_status scale_bank_describe(const scale_bank* bank, size_t* n_samples, size_t* n_classes, size_t* n_seen,
                                 size_t* n_unseen) {
  return guarded([&] {
    require(bank != nullptr, "bank must not be NULL");
    if (n_samples) *n_samples = bank->bank.num_samples();
    if (n_classes) *n_classes = bank->bank.num_classes();
    if (n_seen) *n_seen = bank->bank.seen.size();
    if (n_unseen) *n_unseen = bank->bank.unseen.size();
  });
}

void scale_bank_free(scale_bank* bank) { delete bank; }

scale_status scale_train(const scale_bank* bank, const char* config_json, const char* out_dir,
                         const char* resume_checkpoint, scale_model** out) {
  return guarded([&] {
    require(bank != nullptr && out != nullptr, "bank and out must not be NULL");
    const scale::RunConfig cfg = resolve(config_json);
    std::optional<scale::ModelState> resume;
    if (resume_checkpoint != nullptr && *resume_checkpoint != '\0') resume = scale::load_checkpoint(resume_checkpoint);
    scale::TrainResult r =
        scale::train(bank->bank, cfg.train, out_dir ? out_dir : "", scale::TrainOptions{}, std::move(resume));
    *out = new scale_model{std::move(r.state)};
  });
}

scale_status scale_model_load(const char* checkpoint_path, scale_model** out) {
  return guarded([&] {
    require(checkpoint_path != nullptr && out != nullptr, "checkpoint_path and out must not be NULL");
    *out = new scale_model{scale::load_checkpoint(checkpoint_path)};
  });
}

scale_status scale_model_save(const scale_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model != nullptr && checkpoint_path != nullptr, "model and checkpoint_path must not be NULL");
    scale::save_checkpoint(model->state, checkpoint_path);
  });
}

void scale_model_free(scale_model* model) { delete model; }

scale_status scale_evaluate(const scale_model* model, const scale_bank* bank, scale_split split, size_t threads,
                            double* accuracy, scale_energy_table** table) {
  return guarded([&] {
    require(model != nullptr && bank != nullptr, "model and bank must not be NULL");
    require(split == SCALE_SPLIT_UNSEEN || split == SCALE_SPLIT_SEEN, "unknown split");
    const auto partition = split == SCALE_SPLIT_UNSEEN ? scale::Partition::kUnseenTest : scale::Partition::kSeenHoldout;
    scale::EvalResult r = scale::evaluate(model->state.model, bank->bank, partition, threads);
    if (accuracy) *accuracy = r.accuracy;
    if (table) *table = new scale_energy_table{std::move(r.table)};
  });
}

size_t scale_energy_table_rows(const scale_energy_table* table) {
  return table ? table->table.entries.size() : 0;
}

scale_status scale_energy_table_export(const scale_energy_table* table, const char* csv_path) {
  return guarded([&] {
    require(table != nullptr && csv_path != nullptr, "table and csv_path must not be NULL");
    scale::export_energies(table->table, csv_path);
  });
}

void scale_energy_table_free(scale_energy_table* table) { delete table; }

scale_status scale_micro_create(uint64_t seed, scale_micro** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be NULL");
    *out = new scale_micro(seed);
  });
}

size_t scale_micro_param_count(const scale_micro* micro) { return micro ? micro->problem.param_count() : 0; }

size_t scale_micro_group_count(const scale_micro* micro) { return micro ? micro->problem.groups().size() : 0; }

scale_status scale_micro_group(const scale_micro* micro, size_t index, const char** name, size_t* offset,
                               size_t* size) {
  return guarded([&] {
    require(micro != nullptr, "micro must not be NULL");
    require(index < micro->problem.groups().size(), "group index out of range");
    const auto& g = micro->problem.groups()[index];
    if (name) *name = g.name.c_str();
    if (offset) *offset = g.offset;
    if (size) *size = g.size;
  });
}

scale_status scale_micro_params(const scale_micro* micro, double* out) {
  return guarded([&] {
    require(micro != nullptr && out != nullptr, "micro and out must not be NULL");
    const auto p = micro->problem.params();
    std::copy(p.begin(), p.end(), out);
  });
}

scale_status scale_micro_loss(scale_micro* micro, const double* params, double* loss, double* min_abs_preact,
                              uint64_t* relu_signature) {
  return guarded([&] {
    require(micro != nullptr && params != nullptr && loss != nullptr, "micro, params and loss must not be NULL");
    const auto e = micro->problem.loss({params, micro->problem.param_count()});
    *loss = e.loss;
    if (min_abs_preact) *min_abs_preact = e.min_abs_preactivation;
    if (relu_signature) *relu_signature = e.relu_signature;
  });
}

scale_status scale_micro_gradient(scale_micro* micro, const double* params, double* loss, double* grad) {
  return guarded([&] {
    require(micro != nullptr && params != nullptr && grad != nullptr, "micro, params and grad must not be NULL");
    const std::size_t n = micro->problem.param_count();
    const auto e = micro->problem.gradient({params, n}, {grad, n});
    if (loss) *loss = e.loss;
  });
}

void scale_micro_free(scale_micro* micro) { delete micro; }

}  // extern "C"
