#ifndef DISCOURSE_H
#define DISCOURSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum DscStatus {
  DSC_STATUS_OK = 0,
  /*
   A required pointer was null or a string was not UTF-8.
   */
  DSC_STATUS_INVALID_ARGUMENT = 1,
  DSC_STATUS_IO = 2,
  DSC_STATUS_PARSE = 3,
  DSC_STATUS_INVALID_INPUT = 4,
  DSC_STATUS_INSUFFICIENT_DATA = 5,
  /*
   A Rust panic was caught at the boundary.
   */
  DSC_STATUS_INTERNAL = 6,
} DscStatus;

typedef enum DscRole {
  DSC_ROLE_COUNSELOR = 0,
  DSC_ROLE_TEXTER = 1,
} DscRole;

/*
 Opaque corpus handle.
 */
typedef struct DscCorpus DscCorpus;

/*
 Opaque stage model handle.
 */
typedef struct DscStageModel DscStageModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or null after a
 successful call. Valid until the next call on the same thread.
 */
const char *dsc_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *dsc_version(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void dsc_string_free(char *s);

/*
 Tokenizes `text` and returns the tokens as a JSON array.

 # Safety
 `text` must be a NUL-terminated string; `out_json` must be writable.
 */
enum DscStatus dsc_tokenize_json(const char *text, char **out_json);

/*
 Reads a transcript JSONL file. Rejected records are skipped.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DscStatus dsc_corpus_load(const char *path, struct DscCorpus **out);

/*
 Parses transcript JSONL held in memory.

 # Safety
 `jsonl` must be a NUL-terminated string; `out` must be writable.
 */
enum DscStatus dsc_corpus_parse(const char *jsonl, struct DscCorpus **out);

/*
 Number of conversations, or 0 for a null handle.

 # Safety
 `corpus` must be null or a live handle.
 */
size_t dsc_corpus_len(const struct DscCorpus *corpus);

/*
 # Safety
 `corpus` must be null or a live handle; it is invalid afterwards.
 */
void dsc_corpus_free(struct DscCorpus *corpus);

/*
 Fits a stage model by EM from the default initialization and writes the
 final total log-likelihood to `out_loglik` when it is non-null.

 # Safety
 `corpus` must be a live handle; `out` must be writable.
 */
enum DscStatus dsc_stage_model_fit(const struct DscCorpus *corpus,
                                   size_t stages,
                                   size_t vocab_min_count,
                                   size_t max_iter,
                                   double tol,
                                   struct DscStageModel **out,
                                   double *out_loglik);

/*
 Loads a stage model JSON file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DscStatus dsc_stage_model_load(const char *path, struct DscStageModel **out);

/*
 Number of stages, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t dsc_stage_model_stages(const struct DscStageModel *model);

/*
 Serializes the model to JSON.

 # Safety
 `model` must be a live handle; `out_json` must be writable.
 */
enum DscStatus dsc_stage_model_to_json(const struct DscStageModel *model, char **out_json);

/*
 # Safety
 `model` must be null or a live handle; it is invalid afterwards.
 */
void dsc_stage_model_free(struct DscStageModel *model);

/*
 Viterbi paths of every conversation as a JSON object mapping conversation
 id to 1-based stages.

 # Safety
 Both handles must be live; `out_json` must be writable.
 */
enum DscStatus dsc_decode_json(const struct DscStageModel *model,
                               const struct DscCorpus *corpus,
                               char **out_json);

/*
 Aggregated coordination of the replying role to `initiator` over the
 bundled style markers.

 # Safety
 `corpus` must be a live handle; `out_value` must be writable.
 */
enum DscStatus dsc_coordination(const struct DscCorpus *corpus,
                                enum DscRole initiator,
                                double *out_value);

/*
 Two-sided Mann-Whitney U test of `xs` against `ys`.

 # Safety
 `xs` and `ys` must point to `nx` and `ny` doubles; outputs must be writable.
 */
enum DscStatus dsc_mann_whitney(const double *xs,
                                size_t nx,
                                const double *ys,
                                size_t ny,
                                double *out_u,
                                double *out_p);

/*
 Area under the ROC curve; `labels` holds 0 for negatives and nonzero for
 positives.

 # Safety
 `scores` and `labels` must point to `n` elements; `out_auc` must be writable.
 */
enum DscStatus dsc_auc(const double *scores, const uint8_t *labels, size_t n, double *out_auc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISCOURSE_H */
