#ifndef FOCC_H
#define FOCC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FoccStatus {
  FOCC_STATUS_OK = 0,
  FOCC_STATUS_NULL_POINTER = 1,
  FOCC_STATUS_INVALID_ARGUMENT = 2,
  FOCC_STATUS_SHAPE_MISMATCH = 3,
  FOCC_STATUS_NON_FINITE = 4,
  FOCC_STATUS_INVALID_CONFIG = 5,
  FOCC_STATUS_IO = 6,
  FOCC_STATUS_DIVERGED = 7,
  FOCC_STATUS_CHECK_FAILED = 8,
  FOCC_STATUS_PANIC = 9,
} FoccStatus;

/**
 * Local probability table of one utterance.
 */
typedef struct FoccProbTable FoccProbTable;

/**
 * Validated run configuration.
 */
typedef struct FoccRunConfig FoccRunConfig;

/**
 * Chunked context schedule over a fixed number of frames.
 */
typedef struct FoccSchedule FoccSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes (excluding the terminator).
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t focc_last_error_message(char *buf, size_t len);

/**
 * Static NUL-terminated version string.
 */
const char *focc_version(void);

/**
 * Builds a table from row-major log-probabilities: `log_blank` is
 * `[frames, target_len + 1]`, `log_label` is `[frames, target_len + 1,
 * vocab]` and `target` holds `target_len` labels in `1..=vocab`. Each
 * `(t, u)` row of blank plus labels must sum to one.
 *
 * # Safety
 * Array arguments must be valid for the lengths above; `out` must be valid
 * for one write.
 */
enum FoccStatus focc_prob_table_new(size_t frames,
                                    size_t target_len,
                                    size_t vocab,
                                    const double *log_blank,
                                    const double *log_label,
                                    const size_t *target,
                                    struct FoccProbTable **out);

/**
 * # Safety
 * `table` must be null or a handle from [`focc_prob_table_new`] not yet freed.
 */
void focc_prob_table_free(struct FoccProbTable *table);

/**
 * Log-likelihood `log P(y | x)` by the forward recursion.
 *
 * # Safety
 * `table` must be a live handle; `out` valid for one write.
 */
enum FoccStatus focc_likelihood(const struct FoccProbTable *table, double *out);

/**
 * Log-likelihood by enumerating every alignment path. Exponential cost;
 * fails with `InvalidArgument` above an internal path limit.
 *
 * # Safety
 * `table` must be a live handle; `out` valid for one write.
 */
enum FoccStatus focc_oracle_likelihood(const struct FoccProbTable *table, double *out);

/**
 * Log-likelihood and its gradient with respect to the log blank
 * probabilities (`[frames, target_len + 1]`) and the log probabilities of
 * emitting the next target label (`[frames, target_len]`).
 *
 * # Safety
 * `table` must be a live handle; the gradient buffers must be valid for
 * the lengths above; `out` valid for one write.
 */
enum FoccStatus focc_likelihood_grad(const struct FoccProbTable *table,
                                     double *grad_log_blank,
                                     double *grad_log_emit,
                                     double *out);

/**
 * Schedule with chunk size `chunk_size`, right context `right_context` and
 * `frames` frames.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum FoccStatus focc_schedule_new(size_t chunk_size,
                                  size_t right_context,
                                  size_t frames,
                                  struct FoccSchedule **out);

/**
 * # Safety
 * `schedule` must be null or a handle from [`focc_schedule_new`] not yet freed.
 */
void focc_schedule_free(struct FoccSchedule *schedule);

/**
 * Last visible input frame `e(t)` for 1-based frame `t`.
 *
 * # Safety
 * `schedule` must be a live handle; `out` valid for one write.
 */
enum FoccStatus focc_schedule_context_end(const struct FoccSchedule *schedule,
                                          size_t t,
                                          size_t *out);

/**
 * Writes 1 to `out` when frame `t` is a chunk boundary, else 0.
 *
 * # Safety
 * `schedule` must be a live handle; `out` valid for one write.
 */
enum FoccStatus focc_schedule_is_boundary(const struct FoccSchedule *schedule,
                                          size_t t,
                                          int32_t *out);

/**
 * FoCC-weighted log-likelihood. `log_gamma` is `[frames, target_len + 1]`
 * row-major and must be zero on rows that are not chunk boundaries.
 *
 * # Safety
 * Handles must be live; `log_gamma` valid for the length above; `out`
 * valid for one write.
 */
enum FoccStatus focc_modified_likelihood(const struct FoccProbTable *table,
                                         const struct FoccSchedule *schedule,
                                         const double *log_gamma,
                                         double *out);

/**
 * Token error rate of `hyp` against `reference`.
 *
 * # Safety
 * Arrays must be valid for their lengths; `out` valid for one write.
 */
enum FoccStatus focc_token_error_rate(const size_t *hyp,
                                      size_t hyp_len,
                                      const size_t *reference,
                                      size_t ref_len,
                                      double *out);

/**
 * Loads and validates a JSON run configuration.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` valid for one write.
 */
enum FoccStatus focc_run_config_load(const char *path, struct FoccRunConfig **out);

/**
 * # Safety
 * `config` must be null or a handle from [`focc_run_config_load`] not yet freed.
 */
void focc_run_config_free(struct FoccRunConfig *config);

/**
 * Trains every seed of `config`, writing metrics and checkpoints to its
 * output directory, and stores the median test token error rate in `out`.
 *
 * # Safety
 * `config` must be a live handle; `out` valid for one write.
 */
enum FoccStatus focc_train(const struct FoccRunConfig *config, double *out);

/**
 * Runs the verification suites; `full` selects the full level. Returns
 * `CheckFailed` naming the failing properties when any fails.
 */
enum FoccStatus focc_check(int32_t full);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOCC_H */
