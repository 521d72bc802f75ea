#ifndef ROOMSEQ_ROOMSEQ_H
#define ROOMSEQ_ROOMSEQ_H

/*
 * roomseq: next-room floor plan generation.
 *
 * Every function returns an rs_status. On failure a description is available
 * from rs_last_error() until the next call on the same thread. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with rs_string_free().
 */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RS_API __declspec(dllexport)
#else
#define RS_API __attribute__((visibility("default")))
#endif

typedef enum rs_status {
  RS_OK = 0,
  RS_ERR_INVALID_ARGUMENT = 1,
  RS_ERR_IO = 2,
  RS_ERR_PARSE = 3,
  RS_ERR_VOCABULARY_MISMATCH = 4,
  RS_ERR_INFEASIBLE = 5,
  RS_ERR_SEQUENCE_TOO_LONG = 6,
  RS_ERR_NON_FINITE_LOSS = 7,
  RS_ERR_TOO_FEW_SAMPLES = 8,
  RS_ERR_PORT_IN_USE = 9,
  RS_ERR_INTERNAL = 10
} rs_status;

typedef struct rs_model rs_model;

RS_API const char* rs_version(void);
RS_API const char* rs_last_error(void);
RS_API const char* rs_status_name(rs_status status);
RS_API void rs_string_free(char* s);

/* Vocabulary hash of this build, as 16 lowercase hex digits (static storage). */
RS_API const char* rs_vocab_version(void);

/*
 * Writes a JSONL corpus of n samples. `templates` is NULL for the standard
 * mix or a ';'-separated list of template names. On success *out_summary
 * (may be NULL) receives a JSON object {"samples", "templates": {name: count}}.
 */
RS_API rs_status rs_synth(int n, uint64_t seed, const char* templates, const char* out_path,
                          char** out_summary);

/* Training configuration keys, separated by ';' (static storage). */
RS_API const char* rs_train_config_keys(void);

/*
 * Trains on the JSONL dataset. `config_path` (NULL for defaults) names a
 * key = value or JSON file; `overrides` (may be NULL) holds key = value lines
 * applied afterwards. `data_path` (may be NULL) overrides the dataset key.
 * `resume_from` (may be NULL) continues from a checkpoint. On success
 * *out_summary (may be NULL) receives {"steps", "final": {...}}.
 */
RS_API rs_status rs_train(const char* data_path, const char* config_path, const char* overrides,
                          const char* checkpoint_out, const char* loss_csv,
                          const char* resume_from, char** out_summary);

/* Loads a checkpoint and checks it against the build vocabulary. */
RS_API rs_status rs_model_load(const char* checkpoint_path, rs_model** out);
RS_API void rs_model_free(rs_model* model);

/*
 * Generates one plan. `outline_json` may be NULL: the outline then comes from
 * an "apartment W by H" phrase in the prompt, else the full grid.
 * `decode_json` may be NULL or an object with any of strategy, k, beam_width,
 * temperature, max_rooms, seed, hard_constraints. `format` is "json", "svg"
 * or "text". On RS_ERR_INFEASIBLE, *out_partial (may be NULL) receives the
 * partial plan as JSON.
 */
RS_API rs_status rs_generate(const rs_model* model, const char* prompt, const char* outline_json,
                             const char* decode_json, const char* format, char** out_document,
                             char** out_partial);

/* Mean per-token NLL over the plan tokens of a dataset split ("train",
 * "val" or "all"). */
RS_API rs_status rs_evaluate_nll(const rs_model* model, const char* data_path, const char* split,
                                 double* out_nll);

/*
 * Generates from the first n_generate validation prompts of the dataset and
 * compares them to their ground-truth plans. Writes the metrics report JSON
 * to *out_report.
 */
RS_API rs_status rs_evaluate(const rs_model* model, const char* data_path, int n_generate,
                             const char* decode_json, char** out_report);

/*
 * Runs the session service until should_stop(user) returns nonzero. The
 * checkpoint may be NULL, in which case session creation answers 503.
 */
RS_API rs_status rs_serve(const char* checkpoint_path, const char* host, int port,
                          const char* snapshot_dir, const char* cors_origin,
                          int (*should_stop)(void* user), void* user);

#ifdef __cplusplus
}
#endif

#endif /* ROOMSEQ_ROOMSEQ_H */
