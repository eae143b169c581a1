#ifndef REGIONMIX_H
#define REGIONMIX_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RmStatus {
  RM_STATUS_OK = 0,
  RM_STATUS_NULL_POINTER = 1,
  RM_STATUS_INVALID_UTF8 = 2,
  RM_STATUS_CONFIG = 3,
  RM_STATUS_INVALID_MODEL = 4,
  RM_STATUS_INVALID_ARGUMENT = 5,
  RM_STATUS_NOT_STATIONARY = 6,
  RM_STATUS_NUMERICAL = 7,
  RM_STATUS_BUFFER_TOO_SMALL = 8,
  RM_STATUS_PANIC = 9,
} RmStatus;

/**
 * Opaque model handle.
 */
typedef struct RmModel RmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a JSON model config (optionally carrying acceptance
 * probabilities) and stores a new handle in `*out`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RmStatus rm_model_from_json(const char *json, struct RmModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`rm_model_from_json`] and not be used afterwards.
 */
void rm_model_free(struct RmModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RmStatus rm_model_n_symbols(const struct RmModel *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RmStatus rm_model_n_starts(const struct RmModel *model, size_t *out);

/**
 * Alphabet index of the symbol called `name`.
 *
 * # Safety
 * `model` must be a live handle, `name` NUL-terminated, `out` valid.
 */
enum RmStatus rm_model_symbol_index(const struct RmModel *model, const char *name, size_t *out);

/**
 * Expected region length per start symbol (`n_starts` values).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum RmStatus rm_expected_times(const struct RmModel *model, double *out, size_t len);

/**
 * Solved weights π per start symbol (`n_starts` values).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum RmStatus rm_weights(const struct RmModel *model, double *out, size_t len);

/**
 * Stationary probability of the cylinder `word[0..len]`.
 *
 * # Safety
 * `word` must point to `len` indices and `out` be valid.
 */
enum RmStatus rm_kac_cylinder(const struct RmModel *model,
                              const size_t *word,
                              size_t len,
                              double *out);

/**
 * Largest shift defect over words of length at most `max_len`.
 *
 * # Safety
 * `model` must be a live handle and `out` valid.
 */
enum RmStatus rm_stationarity_defect(const struct RmModel *model, size_t max_len, double *out);

/**
 * Fills `out[0..len]` with a regenerated trace started from π̂.
 *
 * # Safety
 * `out` must hold `len` indices.
 */
enum RmStatus rm_sample_regenerated(const struct RmModel *model,
                                    uint64_t seed,
                                    size_t *out,
                                    size_t len);

/**
 * Fills `out[0..len]` with a sample of the stationary process.
 *
 * # Safety
 * `out` must hold `len` indices.
 */
enum RmStatus rm_sample_stationary(const struct RmModel *model,
                                   uint64_t seed,
                                   size_t *out,
                                   size_t len);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *rm_last_error_message(void);

/**
 * Static description of a status code.
 */
const char *rm_status_str(enum RmStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REGIONMIX_H */
