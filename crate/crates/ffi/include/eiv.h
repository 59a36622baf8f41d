#ifndef EIV_H
#define EIV_H

/* Generated by cbindgen from eiv-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum EivStatus {
  EIV_STATUS_OK = 0,
  EIV_STATUS_NULL_POINTER = 1,
  EIV_STATUS_INVALID_ARGUMENT = 2,
  EIV_STATUS_PARSE_ERROR = 3,
  EIV_STATUS_ESTIMATION_FAILED = 4,
  EIV_STATUS_UTF8_ERROR = 5,
} EivStatus;

/**
 * Estimator selector for `eiv_estimate`.
 */
typedef enum EivMethod {
  EIV_METHOD_PD = 0,
  EIV_METHOD_OLS = 1,
  EIV_METHOD_C3 = 2,
  EIV_METHOD_C4 = 3,
} EivMethod;

/**
 * Opaque dataset handle.
 */
typedef struct EivDataset EivDataset;

/**
 * Opaque estimate-report handle.
 */
typedef struct EivReport EivReport;

/**
 * Tuning knobs for the PD estimator. Zero-initialize and override what you
 * need; zero or negative fields fall back to the defaults (u_max 1.0,
 * grid_size 41, denom_floor 0.05, seed 0).
 */
typedef struct EivOptions {
  double u_max;
  uintptr_t grid_size;
  double denom_floor;
  uint64_t seed;
} EivOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 */
uintptr_t eiv_last_error(char *buf, uintptr_t len);

/**
 * Loads a dataset from a CSV file with header x1..xK,y. Returns null on
 * failure; `eiv_last_error` carries the reason.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct EivDataset *eiv_dataset_from_csv(const char *path);

/**
 * Wraps caller-owned arrays: `x` is row-major N x K, `y` has length N.
 * The data is copied; the caller keeps ownership of the buffers.
 *
 * # Safety
 * `x` must point to n*k readable doubles and `y` to n readable doubles.
 */
struct EivDataset *eiv_dataset_from_arrays(const double *x,
                                           const double *y,
                                           uintptr_t n,
                                           uintptr_t k);

/**
 * Number of observations in the dataset (0 for null).
 */
uintptr_t eiv_dataset_n(const struct EivDataset *dataset);

/**
 * Number of regressors in the dataset (0 for null).
 */
uintptr_t eiv_dataset_k(const struct EivDataset *dataset);

/**
 * Frees a dataset handle. Null is a no-op.
 */
void eiv_dataset_free(struct EivDataset *dataset);

/**
 * Runs an estimator on the dataset. On success writes a report handle to
 * `out_report` (caller frees with `eiv_report_free`). `options` may be null
 * for defaults and only affects the PD method.
 */
enum EivStatus eiv_estimate(const struct EivDataset *dataset,
                            enum EivMethod method,
                            const struct EivOptions *options,
                            struct EivReport **out_report);

/**
 * Number of estimated coefficients.
 */
uintptr_t eiv_report_len(const struct EivReport *report);

/**
 * Coefficient i (NaN when out of range or null).
 */
double eiv_report_coef(const struct EivReport *report, uintptr_t i);

/**
 * Objective value at the optimum (NaN for the moment estimators).
 */
double eiv_report_objective(const struct EivReport *report);

/**
 * 1 when the optimizer converged, 0 otherwise.
 */
int eiv_report_converged(const struct EivReport *report);

/**
 * 1 when the flat-objective (non-identification) flag is set.
 */
int eiv_report_flat_objective(const struct EivReport *report);

/**
 * Frees a report handle. Null is a no-op.
 */
void eiv_report_free(struct EivReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EIV_H */
