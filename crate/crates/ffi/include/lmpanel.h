#ifndef LMPANEL_H
#define LMPANEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2-4 match the command-line exit codes.
 */
typedef enum LmStatus {
  LM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  LM_STATUS_NULL_POINTER = 1,
  LM_STATUS_INVALID_ARGUMENT = 2,
  LM_STATUS_DATA = 3,
  LM_STATUS_NUMERICAL = 4,
  /**
   * A caller-provided buffer is too small.
   */
  LM_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Internal error; the library caught a panic.
   */
  LM_STATUS_INTERNAL = 6,
} LmStatus;

/**
 * Collapsed panel dataset.
 */
typedef struct LmDataset LmDataset;

/**
 * Fitted model of any variant.
 */
typedef struct LmFit LmFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread; never free it.
 */
const char *lm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lm_version(void);

/**
 * AIC and BIC of a log-likelihood with `np` free parameters and sample size `n`.
 *
 * # Safety
 * `aic_out` and `bic_out` must be valid for writes.
 */
enum LmStatus lm_information_criteria(double loglik,
                                      size_t np,
                                      uint64_t n,
                                      double *aic_out,
                                      double *bic_out);

/**
 * Build a dataset from row-major arrays.
 *
 * `responses` holds `n * t * r` 0-based codes indexed `[i][t][j]`;
 * `freq` holds `n` frequencies or is null for all ones; `x1` is `n * p1`
 * and `x2` is `n * (t-1) * p2` (either may be null when its width is 0);
 * `categories` holds `r` category counts. Identical rows are collapsed.
 *
 * # Safety
 * Every non-null pointer must reference at least the stated number of
 * elements; `out` must be valid for writes.
 */
enum LmStatus lm_dataset_new(const size_t *responses,
                             size_t n,
                             size_t t,
                             size_t r,
                             const uint64_t *freq,
                             const double *x1,
                             size_t p1,
                             const double *x2,
                             size_t p2,
                             const size_t *categories,
                             struct LmDataset **out);

/**
 * Read a CSV file. `wide != 0` selects the wide layout (`y{j}_t{t}`,
 * `x{m}_t{t}`, optional `freq`); otherwise the long layout with `id`,
 * `time`, responses `y1, y2, ...` and every other column a covariate.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum LmStatus lm_dataset_read_csv(const char *path, int32_t wide, struct LmDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library not yet freed.
 */
void lm_dataset_free(struct LmDataset *ds);

/**
 * Number of distinct configurations (rows of decoding output).
 *
 * # Safety
 * `ds` must be a live handle; `out` must be valid for writes.
 */
enum LmStatus lm_dataset_n_configs(const struct LmDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must be a live handle; `out` must be valid for writes.
 */
enum LmStatus lm_dataset_n_occasions(const struct LmDataset *ds, size_t *out);

/**
 * Sample size (sum of frequencies).
 *
 * # Safety
 * `ds` must be a live handle; `out` must be valid for writes.
 */
enum LmStatus lm_dataset_n_total(const struct LmDataset *ds, uint64_t *out);

/**
 * Estimate `variant` ("basic", "cov-manifest", "cov-latent", "mixed").
 * `config_json` is null for defaults or a JSON object with any of the keys
 * `k`, `k1`, `tol`, `maxit`, `start`, `n_starts`, `seed`, `transitions`,
 * `param`, `fix_psi`. The basic and mixed models ignore covariates.
 *
 * # Safety
 * `ds` must be a live handle, strings NUL-terminated, `out` valid for writes.
 */
enum LmStatus lm_fit(const struct LmDataset *ds,
                     const char *variant,
                     const char *config_json,
                     struct LmFit **out);

/**
 * # Safety
 * `fit` must be null or a handle from this library not yet freed.
 */
void lm_fit_free(struct LmFit *fit);

/**
 * Summary numbers of a fit. Any output pointer may be null.
 *
 * # Safety
 * `fit` must be a live handle; non-null outputs must be valid for writes.
 */
enum LmStatus lm_fit_summary(const struct LmFit *fit,
                             double *loglik,
                             size_t *np,
                             double *aic_out,
                             double *bic_out,
                             int32_t *converged);

/**
 * Serialize a fit as JSON. Release the string with [`lm_string_free`].
 *
 * # Safety
 * `fit` must be a live handle; `out` must be valid for writes.
 */
enum LmStatus lm_fit_to_json(const struct LmFit *fit, char **out);

/**
 * Restore a fit written by [`lm_fit_to_json`] or the `fit` command.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be valid for writes.
 */
enum LmStatus lm_fit_from_json(const char *json, struct LmFit **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library not yet freed.
 */
void lm_string_free(char *s);

/**
 * Decode every configuration of `ds`. `ul` and `ug` receive row-major
 * `n_configs * T` 1-based states; `len` is the capacity of each buffer.
 *
 * # Safety
 * Handles must be live; `ul` and `ug` must be valid for `len` writes.
 */
enum LmStatus lm_fit_decode(const struct LmFit *fit,
                            const struct LmDataset *ds,
                            size_t *ul,
                            size_t *ug,
                            size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMPANEL_H */
