#ifndef FACTCONF_H
#define FACTCONF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FcLearner {
  FC_LEARNER_LINEAR = 0,
  /**
   * `learner_param` is the ridge penalty.
   */
  FC_LEARNER_RIDGE = 1,
  /**
   * `learner_param` is the number of spline columns per feature.
   */
  FC_LEARNER_SPLINE = 2,
} FcLearner;

typedef enum FcMethod {
  FC_METHOD_FC = 0,
  FC_METHOD_FC_PLUS_DML = 1,
  FC_METHOD_IFE = 2,
  FC_METHOD_IFE_PLUS_DML = 3,
  FC_METHOD_SINGLE_DML = 4,
  FC_METHOD_MULTI_DML = 5,
  FC_METHOD_STACKED_DML = 6,
} FcMethod;

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  /**
   * Bad configuration or argument values.
   */
  FC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unreadable or malformed input data.
   */
  FC_STATUS_INVALID_DATA = 3,
  /**
   * The numerical pipeline failed (singular system, failed bootstrap, ...).
   */
  FC_STATUS_NUMERICAL = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  FC_STATUS_INTERNAL = 5,
} FcStatus;

/**
 * Opaque estimate handle.
 */
typedef struct FcEstimate FcEstimate;

/**
 * Opaque panel handle.
 */
typedef struct FcPanel FcPanel;

typedef struct FcConfig {
  enum FcMethod method;
  size_t rank;
  enum FcLearner learner;
  double learner_param;
  size_t folds;
  /**
   * Random restarts of the rotation search.
   */
  size_t n_init;
  /**
   * 0 skips the bootstrap.
   */
  size_t bootstrap_reps;
  uint64_t seed;
  /**
   * Per-unit dose-response curves instead of one pooled slope.
   */
  bool per_unit;
} FcConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *fc_last_error(void);

/**
 * Library version as a static string.
 */
const char *fc_version(void);

struct FcConfig fc_config_default(void);

/**
 * Builds a panel from row-major `n_units x n_times` arrays. `covariates` holds
 * `n_covariates` such blocks back to back and may be NULL when `n_covariates` is 0.
 *
 * # Safety
 * Every non-null array must hold the stated number of doubles.
 */
enum FcStatus fc_panel_new(size_t n_units,
                           size_t n_times,
                           const double *exposures,
                           const double *outcomes,
                           size_t n_covariates,
                           const double *covariates,
                           struct FcPanel **out);

/**
 * Loads `exposure.csv`, `outcome.csv` and the optional covariate and coordinate files from `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string.
 */
enum FcStatus fc_panel_load(const char *dir, struct FcPanel **out);

/**
 * Draws one data set from a named simulation scenario, neighborhoods included.
 *
 * # Safety
 * `scenario` must be a NUL-terminated string.
 */
enum FcStatus fc_panel_simulate(const char *scenario, uint64_t seed, struct FcPanel **out);

/**
 * Sets each unit's neighborhood to itself plus its `k` nearest units; `k = 0` clears it.
 *
 * # Safety
 * `panel` must come from an `fc_panel_*` constructor.
 */
enum FcStatus fc_panel_set_knn(struct FcPanel *panel, size_t k);

/**
 * # Safety
 * `panel` must come from an `fc_panel_*` constructor; the outputs may be NULL.
 */
enum FcStatus fc_panel_dims(const struct FcPanel *panel, size_t *n_units, size_t *n_times);

/**
 * # Safety
 * `panel` must come from an `fc_panel_*` constructor and not be used afterwards. NULL is a no-op.
 */
void fc_panel_free(struct FcPanel *panel);

/**
 * Fits the configured estimator, with bootstrap intervals when `bootstrap_reps > 0`.
 *
 * # Safety
 * `panel` must be a live panel handle and `config` a valid pointer.
 */
enum FcStatus fc_estimate(const struct FcPanel *panel,
                          const struct FcConfig *config,
                          struct FcEstimate **out);

/**
 * Number of pooled slopes: 1, or 2 (direct, spillover) under interference.
 *
 * # Safety
 * `est` must be a live estimate handle or NULL (which yields 0).
 */
size_t fc_estimate_n_beta(const struct FcEstimate *est);

/**
 * # Safety
 * `est` must be a live estimate handle and `value` a valid pointer.
 */
enum FcStatus fc_estimate_beta(const struct FcEstimate *est, size_t index, double *value);

/**
 * Average causal derivative.
 *
 * # Safety
 * `est` must be a live estimate handle and `value` a valid pointer.
 */
enum FcStatus fc_estimate_acd(const struct FcEstimate *est, double *value);

/**
 * Bootstrap interval of a named summary such as `beta.direct` or `acd`.
 *
 * # Safety
 * `est` must be a live estimate handle, `name` NUL-terminated, `lo` and `hi` valid pointers.
 */
enum FcStatus fc_estimate_interval(const struct FcEstimate *est,
                                   const char *name,
                                   double *lo,
                                   double *hi);

/**
 * Full estimate as compact JSON. The string lives as long as the handle.
 *
 * # Safety
 * `est` must be a live estimate handle or NULL (which yields NULL).
 */
const char *fc_estimate_json(const struct FcEstimate *est);

/**
 * # Safety
 * `est` must come from `fc_estimate` and not be used afterwards. NULL is a no-op.
 */
void fc_estimate_free(struct FcEstimate *est);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACTCONF_H */
