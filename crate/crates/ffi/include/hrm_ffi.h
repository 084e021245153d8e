#ifndef HRM_FFI_H
#define HRM_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HrmStatus {
  HRM_STATUS_OK = 0,
  HRM_STATUS_NULL_POINTER = 1,
  HRM_STATUS_CONFIG = 2,
  HRM_STATUS_TRAINING = 3,
  HRM_STATUS_DATA = 4,
  HRM_STATUS_IO = 5,
  HRM_STATUS_PANIC = 6,
} HrmStatus;

/**
 * Opaque dataset handle.
 */
typedef struct HrmDataset HrmDataset;

/**
 * Opaque trained-model handle.
 */
typedef struct HrmModel HrmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next failing call.
 */
const char *hrm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hrm_version(void);

/**
 * Copies a row-major `n x d` design, `n` targets and optional `n` environment
 * labels (`env` may be null).
 *
 * # Safety
 * `x` must point to `n*d` doubles, `y` to `n` doubles and `env`, when
 * non-null, to `n` labels.
 */
enum HrmStatus hrm_dataset_new(const double *x,
                               size_t n,
                               size_t d,
                               const double *y,
                               const size_t *env,
                               struct HrmDataset **out);

/**
 * Pooled selection-bias training set with default settings and bias strength `r`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum HrmStatus hrm_dataset_generate_selection_bias(double r,
                                                   uint64_t seed,
                                                   struct HrmDataset **out);

/**
 * # Safety
 * `ds` must be a live dataset handle; `n` and `d` valid pointers.
 */
enum HrmStatus hrm_dataset_shape(const struct HrmDataset *ds, size_t *n, size_t *d);

/**
 * Copies the data into row-major `x` (`n*d`) and `y` (`n`).
 *
 * # Safety
 * Buffers must hold at least `n*d` and `n` doubles.
 */
enum HrmStatus hrm_dataset_copy(const struct HrmDataset *ds, double *x, double *y);

/**
 * # Safety
 * `ds` must come from this library and not be used afterwards. Null is ignored.
 */
void hrm_dataset_free(struct HrmDataset *ds);

/**
 * Pooled least squares fitted by gradient descent with default settings.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` a valid handle slot.
 */
enum HrmStatus hrm_fit_erm(const struct HrmDataset *ds, uint64_t seed, struct HrmModel **out);

/**
 * Runs the joint clustering and gate-learning loop. `config_json` may be
 * null for defaults or hold a JSON object with any subset of the HRM
 * configuration fields.
 *
 * # Safety
 * `ds` must be a live dataset handle, `config_json` null or NUL-terminated.
 */
enum HrmStatus hrm_fit_hrm(const struct HrmDataset *ds,
                           const char *config_json,
                           uint64_t seed,
                           struct HrmModel **out);

/**
 * # Safety
 * `model` must be a live model handle; `d` a valid pointer.
 */
enum HrmStatus hrm_model_dim(const struct HrmModel *model, size_t *d);

/**
 * Effective coefficients (gates applied) and intercept.
 *
 * # Safety
 * `theta` must hold `d` doubles, where `d` equals the model dimension.
 */
enum HrmStatus hrm_model_coefficients(const struct HrmModel *model,
                                      double *theta,
                                      size_t d,
                                      double *intercept);

/**
 * Deterministic gate values `clip(μ, 0, 1)`; all ones for ungated models.
 *
 * # Safety
 * `mask` must hold `d` doubles.
 */
enum HrmStatus hrm_model_mask(const struct HrmModel *model, double *mask, size_t d);

/**
 * Predictions for a row-major `n x d` matrix.
 *
 * # Safety
 * `x` must hold `n*d` doubles and `out` `n` doubles.
 */
enum HrmStatus hrm_model_predict(const struct HrmModel *model,
                                 const double *x,
                                 size_t n,
                                 size_t d,
                                 double *out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is ignored.
 */
void hrm_model_free(struct HrmModel *model);

/**
 * Mean, unbiased standard deviation and maximum of per-environment losses.
 *
 * # Safety
 * `losses` must hold `n` doubles; outputs must be valid pointers.
 */
enum HrmStatus hrm_metrics(const double *losses, size_t n, double *mean, double *std, double *max);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HRM_FFI_H */
