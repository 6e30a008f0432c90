#ifndef SOFTREG_H
#define SOFTREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible function.
typedef enum SrStatus {
  SR_STATUS_OK = 0,
  // A required pointer argument was null.
  SR_STATUS_NULL_POINTER = 1,
  // An argument is outside the domain of the operation.
  SR_STATUS_DOMAIN = 2,
  // Invalid model, data or run configuration.
  SR_STATUS_CONFIG = 3,
  // Non-finite values or a failed factorization.
  SR_STATUS_NUMERICAL = 4,
  // The object cannot serve the request (e.g. DIC of a point fit).
  SR_STATUS_STATE = 5,
  // File or serialization failure.
  SR_STATUS_IO = 6,
  // An internal panic was caught at the boundary.
  SR_STATUS_PANIC = 7,
  // A caller-provided buffer has the wrong length.
  SR_STATUS_BUFFER_SIZE = 8,
} SrStatus;

// What [`sr_predict`] writes per observation.
typedef enum SrPredictKind {
  SR_PREDICT_KIND_MEAN = 0,
  SR_PREDICT_KIND_QUANTILE = 1,
} SrPredictKind;

// Opaque data set: optional response plus named covariates.
typedef struct SrData SrData;

// Opaque fitted model.
typedef struct SrFit SrFit;

// Opaque model definition.
typedef struct SrModel SrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call into this library on the same thread.
const char *sr_last_error(void);

// Library version as a static NUL-terminated string.
const char *sr_version(void);

// Softplus with sharpness `a` evaluated at `x`.
//
// # Safety
// `out` must be null or point to writable memory for one `double`.
enum SrStatus sr_softplus(double a, double x, double *out);

// Inverse softplus with sharpness `a`; `y` must be positive.
//
// # Safety
// `out` must be null or point to writable memory for one `double`.
enum SrStatus sr_softplus_inverse(double a, double y, double *out);

// Smallest predictor value beyond which a change of `gamma` acts linearly within relative error `alpha`.
//
// # Safety
// `out` must be null or point to writable memory for one `double`.
enum SrStatus sr_linear_threshold(double a,
                                  double gamma,
                                  double alpha,
                                  double *out);

// Parses a model definition from JSON.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum SrStatus sr_model_from_json(const char *json, struct SrModel **out);

// # Safety
// `model` must be null or a handle from [`sr_model_from_json`] not yet freed.
void sr_model_free(struct SrModel *model);

// Builds a data set from arrays of length `n`. `y` may be null for prediction-only data.
// `names` and `columns` each hold `n_columns` entries.
//
// # Safety
// Pointers must reference arrays of the stated lengths; names must be NUL-terminated.
enum SrStatus sr_data_new(const double *y,
                          size_t n,
                          const char *const *names,
                          const double *const *columns,
                          size_t n_columns,
                          struct SrData **out);

// Reads a numeric CSV file. `response` may be null when the file has no response column.
//
// # Safety
// `path` and `response` (if not null) must be NUL-terminated; `out` must be writable.
enum SrStatus sr_data_from_csv(const char *path, const char *response, struct SrData **out);

// Number of observations in a data set.
//
// # Safety
// `data` must be a live handle; `out` must be writable.
enum SrStatus sr_data_n(const struct SrData *data, size_t *out);

// # Safety
// `data` must be null or a live handle.
void sr_data_free(struct SrData *data);

// Maximum-likelihood fit by Fisher scoring.
//
// # Safety
// `model` and `data` must be live handles; `out` must be writable.
enum SrStatus sr_fit_mle(const struct SrModel *model,
                         const struct SrData *data,
                         struct SrFit **out);

// Posterior sample by Metropolis-Hastings with IWLS proposals.
//
// # Safety
// `model` and `data` must be live handles; `out` must be writable.
enum SrStatus sr_fit_mcmc(const struct SrModel *model,
                          const struct SrData *data,
                          size_t iterations,
                          size_t burn_in,
                          size_t thin,
                          uint64_t seed,
                          struct SrFit **out);

// Total number of coefficients across all parameter blocks.
//
// # Safety
// `fit` must be a live handle; `out` must be writable.
enum SrStatus sr_fit_n_coefficients(const struct SrFit *fit, size_t *out);

// Point estimates (MLE or posterior mean), blocks concatenated in model order.
//
// # Safety
// `buf` must hold `len` doubles, where `len` equals [`sr_fit_n_coefficients`].
enum SrStatus sr_fit_coefficients(const struct SrFit *fit, double *buf, size_t len);

// Deviance information criterion of a posterior fit on its data.
//
// # Safety
// `fit` and `data` must be live handles; `out` must be writable.
enum SrStatus sr_fit_dic(const struct SrFit *fit, const struct SrData *data, double *out);

// Plug-in prediction per observation of `newdata`; `prob` is used for quantiles only.
//
// # Safety
// `buf` must hold `len` doubles, where `len` equals the number of observations.
enum SrStatus sr_predict(const struct SrFit *fit,
                         const struct SrData *newdata,
                         enum SrPredictKind kind,
                         double prob,
                         double *buf,
                         size_t len);

// Serializes a fit to JSON. Free the string with [`sr_string_free`].
//
// # Safety
// `fit` must be a live handle; `out` must be writable.
enum SrStatus sr_fit_to_json(const struct SrFit *fit, char **out);

// Restores a fit written by [`sr_fit_to_json`].
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum SrStatus sr_fit_from_json(const char *json, struct SrFit **out);

// # Safety
// `s` must be null or a string returned by this library.
void sr_string_free(char *s);

// # Safety
// `fit` must be null or a live handle.
void sr_fit_free(struct SrFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTREG_H */
