#ifndef ARTERIAL_RISK_FFI_H
#define ARTERIAL_RISK_FFI_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum ArStatus {
  AR_STATUS_OK = 0,
  AR_STATUS_NULL_POINTER = 1,
  AR_STATUS_INVALID_ARGUMENT = 2,
  AR_STATUS_IO = 3,
  AR_STATUS_FORMAT = 4,
  /**
   * Input data cannot support the request (no strata, one class, ...).
   */
  AR_STATUS_DATA = 5,
  /**
   * Separation, non-convergence or a degenerate sampler.
   */
  AR_STATUS_NUMERICAL = 6,
  AR_STATUS_PANIC = 7,
} ArStatus;

/**
 * Opaque matched case-control dataset.
 */
typedef struct ArDataset ArDataset;

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ar_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ar_version(void);

/**
 * Loads a dataset CSV; its manifest must sit beside it.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ArStatus ar_dataset_load(const char *path, struct ArDataset **out);

/**
 * Builds a dataset from `n_strata * (m + 1) * k` values, stratum-major with
 * the case row first in each stratum.
 *
 * # Safety
 * `features` must point to that many doubles and `out` must be valid.
 */
enum ArStatus ar_dataset_from_rows(const double *features,
                                   size_t n_strata,
                                   size_t m,
                                   size_t k,
                                   struct ArDataset **out);

/**
 * Simulates a matched dataset over the default features
 * (avg_speed_s2, up_vol_s2, rainy). `beta` may be null for the default
 * coefficients, otherwise it holds `k` values.
 *
 * # Safety
 * `beta` must be null or point to `k` doubles; `out` must be valid.
 */
enum ArStatus ar_simulate_matched(size_t n_strata,
                                  size_t m,
                                  uint64_t seed,
                                  const double *beta,
                                  size_t k,
                                  struct ArDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must come from this library and not be used afterwards.
 */
void ar_dataset_free(struct ArDataset *ds);

/**
 * Number of strata, controls per case and features.
 *
 * # Safety
 * `ds` must be a live handle; each output pointer must be valid.
 */
enum ArStatus ar_dataset_shape(const struct ArDataset *ds, size_t *n_strata, size_t *m, size_t *k);

/**
 * Conditional log-likelihood at `beta`.
 *
 * # Safety
 * `beta` must hold `k` doubles and `out` must be valid.
 */
enum ArStatus ar_cond_log_likelihood(const struct ArDataset *ds,
                                     const double *beta,
                                     size_t k,
                                     double *out);

/**
 * Gradient of the conditional log-likelihood, written to `grad[0..k]`.
 *
 * # Safety
 * `beta` and `grad` must each hold `k` doubles.
 */
enum ArStatus ar_cond_gradient(const struct ArDataset *ds,
                               const double *beta,
                               size_t k,
                               double *grad);

/**
 * Maximum conditional likelihood estimate and standard errors.
 *
 * # Safety
 * `estimate` and `std_errors` must each hold `k` doubles; `log_likelihood`
 * may be null.
 */
enum ArStatus ar_cond_mle(const struct ArDataset *ds,
                          double *estimate,
                          double *std_errors,
                          size_t k,
                          double *log_likelihood);

/**
 * Area under the ROC curve; nonzero `labels` mark positives. Ties earn half.
 *
 * # Safety
 * `scores` and `labels` must each hold `n` elements; `out` must be valid.
 */
enum ArStatus ar_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Bayesian conditional logistic fit. Writes posterior means and 95%
 * interval bounds for each coefficient plus DIC and AUC.
 *
 * # Safety
 * `mean`, `bci_low` and `bci_high` must each hold `k` doubles; `dic` and
 * `auc` may be null.
 */
enum ArStatus ar_fit_conditional(const struct ArDataset *ds,
                                 size_t iterations,
                                 size_t burn_in,
                                 uint64_t seed,
                                 double *mean,
                                 double *bci_low,
                                 double *bci_high,
                                 size_t k,
                                 double *dic,
                                 double *auc);

#endif  /* ARTERIAL_RISK_FFI_H */
