#ifndef CENSAFT_H
#define CENSAFT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result codes.
 */
typedef enum CensaftStatus {
  CENSAFT_STATUS_OK = 0,
  CENSAFT_STATUS_NULL_POINTER = 1,
  CENSAFT_STATUS_INVALID_DATA = 2,
  CENSAFT_STATUS_DIMENSION_MISMATCH = 3,
  CENSAFT_STATUS_INFEASIBLE = 4,
  CENSAFT_STATUS_NOT_POSITIVE_DEFINITE = 5,
  CENSAFT_STATUS_ITERATION_LIMIT = 6,
  CENSAFT_STATUS_LARGEST_NOT_CENSORED = 7,
  CENSAFT_STATUS_TOO_FEW_COVARIATES = 8,
  CENSAFT_STATUS_TOO_FEW_CENSORED = 9,
  CENSAFT_STATUS_NO_TAIL_TIES = 10,
  CENSAFT_STATUS_BUFFER_TOO_SMALL = 11,
  CENSAFT_STATUS_INVALID_ARGUMENT = 12,
  CENSAFT_STATUS_NUMERICAL = 13,
  CENSAFT_STATUS_PANIC = 14,
} CensaftStatus;

/*
 Estimation pipelines accepted by [`censaft_fit`].
 */
typedef enum CensaftMethod {
  CENSAFT_METHOD_EFRON = 0,
  CENSAFT_METHOD_COND_MEAN = 1,
  CENSAFT_METHOD_COND_MEDIAN = 2,
  CENSAFT_METHOD_RESAMP_COND_MEAN = 3,
  CENSAFT_METHOD_RESAMP_COND_MEDIAN = 4,
  CENSAFT_METHOD_PRED_DIFF = 5,
} CensaftMethod;

/*
 Opaque dataset handle.
 */
typedef struct CensaftDataset CensaftDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *censaft_last_error(void);

/*
 Builds a dataset from `n` times, 0/1 statuses and a row-major `n x p`
 covariate matrix (`covariates` may be null when `p == 0`).

 # Safety
 Pointers must reference arrays of the stated lengths; `out` must be a
 valid pointer to receive the handle.
 */
enum CensaftStatus censaft_dataset_new(const double *times,
                                       const uint8_t *statuses,
                                       const double *covariates,
                                       size_t n,
                                       size_t p,
                                       struct CensaftDataset **out);

/*
 Releases a handle from [`censaft_dataset_new`]. Null is ignored.

 # Safety
 `handle` must come from [`censaft_dataset_new`] and not be freed twice.
 */
void censaft_dataset_free(struct CensaftDataset *handle);

/*
 Number of observations, or 0 for a null handle.

 # Safety
 `handle` must be null or a live dataset handle.
 */
size_t censaft_dataset_n(const struct CensaftDataset *handle);

/*
 Number of covariates, or 0 for a null handle.

 # Safety
 `handle` must be null or a live dataset handle.
 */
size_t censaft_dataset_p(const struct CensaftDataset *handle);

/*
 K-M weights in input row order; `out_weights` holds `n` values.

 # Safety
 `handle` must be live and `out_weights` must hold `n` doubles.
 */
enum CensaftStatus censaft_weights(const struct CensaftDataset *handle,
                                   bool tail_correction,
                                   double *out_weights);

/*
 K-M curve at its distinct event times. Each output buffer holds
 `capacity` doubles; the number of points is stored in `out_len`.

 # Safety
 `handle` must be live; buffers must hold `capacity` doubles.
 */
enum CensaftStatus censaft_km(const struct CensaftDataset *handle,
                              bool tail_correction,
                              double *out_times,
                              double *out_survival,
                              double *out_jumps,
                              size_t capacity,
                              size_t *out_len);

/*
 Fits one pipeline. `method` is a [`CensaftMethod`] value; a NaN
 `lambda2` selects the default ridge. `out_beta` holds `p` doubles and
 `out_imputed_time` receives NaN when no value is imputed. Either of
 `out_intercept` and `out_imputed_time` may be null.

 # Safety
 `handle` must be live and `out_beta` must hold `p` doubles.
 */
enum CensaftStatus censaft_fit(const struct CensaftDataset *handle,
                               int32_t method,
                               double lambda2,
                               uint64_t seed,
                               double *out_beta,
                               double *out_intercept,
                               double *out_imputed_time);

/*
 Iterative imputation of censored ties at the maximum, in original time
 units. `original_scale` selects the scale of the difference regression.

 # Safety
 `handle` must be live; `out` must hold `capacity` doubles.
 */
enum CensaftStatus censaft_tailties_iterative(const struct CensaftDataset *handle,
                                              bool original_scale,
                                              double *out,
                                              size_t capacity,
                                              size_t *out_len);

/*
 Extrapolated lifetimes for censored ties at the maximum.

 # Safety
 `handle` must be live; `out` must hold `capacity` doubles.
 */
enum CensaftStatus censaft_tailties_extrapolate(const struct CensaftDataset *handle,
                                                double psi,
                                                double *out,
                                                size_t capacity,
                                                size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CENSAFT_H */
