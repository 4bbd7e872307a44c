/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the SCALE zero-shot engine.
 *
 * Objects are opaque handles released with the matching *_free function.
 * Every fallible call returns a scale_status; on failure the message is
 * available from scale_last_error() on the calling thread until the next
 * call. Configuration is passed as JSON text (see README for the schema).
 */
#ifndef SCALE_SCALE_H_
#define SCALE_SCALE_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SCALE_API __declspec(dllexport)
#else
#define SCALE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values match the CLI exit codes. */
typedef enum scale_status {
  SCALE_OK = 0,
  SCALE_ERR_VALIDATION = 1,
  SCALE_ERR_NUMERIC = 2,
  SCALE_ERR_IO = 3,
  SCALE_ERR_INTERNAL = 4
} scale_status;

typedef enum scale_split { SCALE_SPLIT_UNSEEN = 0, SCALE_SPLIT_SEEN = 1 } scale_split;

typedef struct scale_bank scale_bank;
typedef struct scale_model scale_model;
typedef struct scale_energy_table scale_energy_table;
typedef struct scale_micro scale_micro;

SCALE_API const char* scale_last_error(void);
SCALE_API const char* scale_version(void);
SCALE_API void scale_string_free(char* s);

/* Merges config_json over the defaults, validates it and returns the fully
 * resolved document (caller frees with scale_string_free). NULL or "" means
 * all defaults. */
SCALE_API scale_status scale_config_resolve(const char* config_json, char** resolved_json);

/* Feature banks. */
SCALE_API scale_status scale_bank_synthesize(const char* config_json, scale_bank** out);
SCALE_API scale_status scale_bank_load(const char* dir, scale_bank** out);
SCALE_API scale_status scale_bank_save(const scale_bank* bank, const char* dir);
SCALE_API scale_status scale_bank_describe(const scale_bank* bank, size_t* n_samples, size_t* n_classes,
                                           size_t* n_seen, size_t* n_unseen);
SCALE_API void scale_bank_free(scale_bank* bank);

/* Training. out_dir receives metrics.jsonl and checkpoint.scl; it may be
 * NULL to train in memory. resume_checkpoint may be NULL. */
SCALE_API scale_status scale_train(const scale_bank* bank, const char* config_json, const char* out_dir,
                                   const char* resume_checkpoint, scale_model** out);
SCALE_API scale_status scale_model_load(const char* checkpoint_path, scale_model** out);
SCALE_API scale_status scale_model_save(const scale_model* model, const char* checkpoint_path);
SCALE_API void scale_model_free(scale_model* model);

/* Zero-shot evaluation. threads <= 1 runs serially. */
SCALE_API scale_status scale_evaluate(const scale_model* model, const scale_bank* bank, scale_split split,
                                      size_t threads, double* accuracy, scale_energy_table** table);
SCALE_API size_t scale_energy_table_rows(const scale_energy_table* table);
SCALE_API scale_status scale_energy_table_export(const scale_energy_table* table, const char* csv_path);
SCALE_API void scale_energy_table_free(scale_energy_table* table);

/* Seeded float64 micro instance of the training objective, exposed for
 * external gradient checking. Parameters are one flat vector partitioned
 * into named groups. */
SCALE_API scale_status scale_micro_create(uint64_t seed, scale_micro** out);
SCALE_API size_t scale_micro_param_count(const scale_micro* micro);
SCALE_API size_t scale_micro_group_count(const scale_micro* micro);
SCALE_API scale_status scale_micro_group(const scale_micro* micro, size_t index, const char** name, size_t* offset,
                                         size_t* size);
SCALE_API scale_status scale_micro_params(const scale_micro* micro, double* out);
/* min_abs_preact and relu_signature describe the ReLU activation pattern at
 * `params`; either may be NULL. */
SCALE_API scale_status scale_micro_loss(scale_micro* micro, const double* params, double* loss,
                                        double* min_abs_preact, uint64_t* relu_signature);
SCALE_API scale_status scale_micro_gradient(scale_micro* micro, const double* params, double* loss, double* grad);
SCALE_API void scale_micro_free(scale_micro* micro);

#ifdef __cplusplus
}
#endif

#endif /* SCALE_SCALE_H_ */
