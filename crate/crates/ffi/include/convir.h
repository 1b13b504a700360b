#ifndef CONVIR_H
#define CONVIR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConvirStatus {
  CONVIR_STATUS_OK = 0,
  CONVIR_STATUS_NULL_ARGUMENT = 1,
  CONVIR_STATUS_INVALID_UTF8 = 2,
  CONVIR_STATUS_IO = 3,
  CONVIR_STATUS_PARSE = 4,
  CONVIR_STATUS_NOT_FOUND = 5,
  CONVIR_STATUS_INVALID_ARGUMENT = 6,
  CONVIR_STATUS_DIMENSION = 7,
  CONVIR_STATUS_INTEGRITY = 8,
  CONVIR_STATUS_VERSION = 9,
  CONVIR_STATUS_CONFIG_HASH = 10,
  CONVIR_STATUS_INVALID_SESSION = 11,
  CONVIR_STATUS_EMPTY = 12,
  CONVIR_STATUS_DIVERGED = 13,
  CONVIR_STATUS_IMAGE = 14,
  CONVIR_STATUS_PANIC = 15,
} ConvirStatus;

/**
 * A corpus plus trained checkpoints, index and fusion weights.
 */
typedef struct ConvirRetriever ConvirRetriever;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library and valid until the next call on the same thread.
 */
const char *convir_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *convir_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void convir_string_free(char *s);

/**
 * Fraction of `ranks` (1-based) at most `k`.
 *
 * # Safety
 * `ranks` must point to `n` values; `out` must be writable.
 */
enum ConvirStatus convir_recall_at_k(const size_t *ranks, size_t n, size_t k, double *out);

/**
 * Mean reciprocal rank of `ranks` (1-based).
 *
 * # Safety
 * `ranks` must point to `n` values; `out` must be writable.
 */
enum ConvirStatus convir_mrr(const size_t *ranks, size_t n, double *out);

/**
 * Writes a synthetic corpus to `out_dir`.
 *
 * # Safety
 * `out_dir` must be a NUL-terminated string.
 */
enum ConvirStatus convir_synth_corpus(const char *out_dir, size_t n_images, uint64_t seed);

/**
 * Opens a trained run. `config_path` may be null for the default config.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable. The
 * handle must be released with [`convir_retriever_free`].
 */
enum ConvirStatus convir_retriever_open(const char *corpus_dir,
                                        const char *run_dir,
                                        const char *config_path,
                                        struct ConvirRetriever **out);

/**
 * Releases a retriever. Null is ignored.
 *
 * # Safety
 * `h` must come from [`convir_retriever_open`] and not have been freed.
 */
void convir_retriever_free(struct ConvirRetriever *h);

/**
 * Number of images in the retriever's corpus.
 *
 * # Safety
 * `h` must be a live handle or null (returns 0).
 */
size_t convir_retriever_image_count(const struct ConvirRetriever *h);

/**
 * Ranks the pool for a session given as JSON (`session_id`, `category`,
 * `turns`) and returns the top `k` with partial scores as JSON.
 *
 * # Safety
 * `h` must be a live handle, `session_json` NUL-terminated, `out_json`
 * writable. Free the result with [`convir_string_free`].
 */
enum ConvirStatus convir_retriever_retrieve(const struct ConvirRetriever *h,
                                            const char *session_json,
                                            size_t k,
                                            char **out_json);

/**
 * Evaluates a split (`"train"`, `"val"` or `"test"`) and returns the fused
 * report as JSON.
 *
 * # Safety
 * `h` must be a live handle, `split` NUL-terminated, `out_json` writable.
 * Free the result with [`convir_string_free`].
 */
enum ConvirStatus convir_retriever_evaluate(const struct ConvirRetriever *h,
                                            const char *split,
                                            char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVIR_H */
