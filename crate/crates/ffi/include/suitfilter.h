#ifndef SUITFILTER_H
#define SUITFILTER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_INPUT = 2,
  SF_STATUS_DEGENERATE_TEST = 3,
  SF_STATUS_DEGENERATE_FIT = 4,
  SF_STATUS_PARSE = 5,
  SF_STATUS_IO = 6,
  SF_STATUS_SCHEDULE_EXHAUSTED = 7,
  SF_STATUS_INTERNAL = 8,
} SfStatus;

typedef enum {
  SF_SCHEDULE_KIND_OBRIEN_FLEMING = 0,
  SF_SCHEDULE_KIND_POCOCK = 1,
} SfScheduleKind;

/**
 * Opaque handle to a trained correctness estimator.
 */
typedef struct SfEstimator SfEstimator;

typedef struct {
  double t;
  double df;
  double p_one_sided;
  double mean_test;
  double mean_user_adjusted;
  double var_test;
  double var_user;
} SfWelchResult;

typedef struct {
  /**
   * 1 for SUITABLE, 0 for INCONCLUSIVE.
   */
  int32_t suitable;
  double p_value;
  double t;
  double df;
  double m_prime;
  double mean_pc_test;
  double mean_pc_user;
} SfDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *sf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sf_version(void);

/**
 * Computes the twelve signals of one logit vector into `out[0..12]`.
 *
 * # Safety
 * `logits` must point to `k` doubles and `out` to 12 writable doubles.
 */
SfStatus sf_extract_signals(const double *logits, size_t k, double *out);

/**
 * Parses an estimator from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable handle slot.
 */
SfStatus sf_estimator_from_json(const char *json, SfEstimator **out);

/**
 * Loads an estimator JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
SfStatus sf_estimator_load(const char *path, SfEstimator **out);

/**
 * Serializes an estimator; release the string with [`sf_string_free`].
 *
 * # Safety
 * `estimator` must be a live handle and `out` a writable pointer slot.
 */
SfStatus sf_estimator_to_json(const SfEstimator *estimator, char **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `estimator` must be null or a handle not yet freed.
 */
void sf_estimator_free(SfEstimator *estimator);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void sf_string_free(char *s);

/**
 * Correctness probabilities for `n` row-major logit vectors of width `k`.
 *
 * # Safety
 * `logits` must hold `n * k` doubles and `out` room for `n`.
 */
SfStatus sf_estimator_predict(const SfEstimator *estimator,
                              const double *logits,
                              size_t n,
                              size_t k,
                              double *out);

/**
 * One-sided Welch non-inferiority test on correctness probabilities.
 *
 * # Safety
 * The input pointers must hold `n_test` and `n_user` doubles; `out` must be writable.
 */
SfStatus sf_welch_noninferiority(const double *pc_test,
                                 size_t n_test,
                                 const double *pc_user,
                                 size_t n_user,
                                 double margin,
                                 SfWelchResult *out);

/**
 * Full suitability decision from raw logits of width `k`.
 *
 * # Safety
 * `test_logits` must hold `n_test * k` doubles, `user_logits` `n_user * k`; `out` must be writable.
 */
SfStatus sf_decide(const SfEstimator *estimator,
                   const double *test_logits,
                   size_t n_test,
                   const double *user_logits,
                   size_t n_user,
                   size_t k,
                   double margin,
                   double alpha,
                   SfDecision *out);

/**
 * Student's t CDF.
 *
 * # Safety
 * `out` must point to a writable double.
 */
SfStatus sf_t_cdf(double t, double df, double *out);

/**
 * Per-stage thresholds of an alpha-spending schedule into `out[0..n_stages]`.
 *
 * # Safety
 * `out` must have room for `n_stages` doubles.
 */
SfStatus sf_alpha_schedule(SfScheduleKind kind, size_t n_stages, double alpha, double *out);

/**
 * Benjamini-Hochberg rejections; `out[i]` is 1 when hypothesis `i` is rejected.
 *
 * # Safety
 * `p_values` must hold `n` doubles and `out` room for `n` bytes.
 */
SfStatus sf_benjamini_hochberg(const double *p_values, size_t n, double alpha, uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUITFILTER_H */
