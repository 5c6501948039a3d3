#ifndef DROPOUT_DRO_H
#define DROPOUT_DRO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DroStatus {
  DRO_STATUS_OK = 0,
  DRO_STATUS_NULL_POINTER = 1,
  DRO_STATUS_INVALID_ARGUMENT = 2,
  DRO_STATUS_DIMENSION_MISMATCH = 3,
  DRO_STATUS_SINGULAR = 4,
  DRO_STATUS_NO_CONVERGENCE = 5,
  DRO_STATUS_DIVERGED = 6,
  DRO_STATUS_NUMERIC = 7,
  DRO_STATUS_BUFFER_TOO_SMALL = 8,
  DRO_STATUS_PANIC = 9,
  DRO_STATUS_INTERNAL = 10,
} DroStatus;

typedef enum DroFamily {
  DRO_FAMILY_LINEAR = 0,
  DRO_FAMILY_LOGISTIC = 1,
  DRO_FAMILY_POISSON = 2,
} DroFamily;

/**
 * Opaque design matrix plus response.
 */
typedef struct DroDataset DroDataset;

/**
 * Opaque result of an MLMC run.
 */
typedef struct DroMlmcReport DroMlmcReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null.
 *
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *dro_last_error_message(void);

/**
 * Copies a row-major `n × d` matrix `x` and response `y` into a new dataset.
 *
 * # Safety
 * `x` must point to `n * d` doubles and `y` to `n` doubles; `out` must be
 * writable.
 */
enum DroStatus dro_dataset_new(const double *x,
                               const double *y,
                               size_t n,
                               size_t d,
                               struct DroDataset **out);

/**
 * # Safety
 * `ds` must come from [`dro_dataset_new`] and not be freed twice.
 */
void dro_dataset_free(struct DroDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle or null.
 */
size_t dro_dataset_dim(const struct DroDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle or null.
 */
size_t dro_dataset_len(const struct DroDataset *ds);

/**
 * Closed-form linear dropout estimate, written to `beta_out`.
 *
 * # Safety
 * `ds` must be a live handle and `beta_out` must hold `beta_len` doubles.
 */
enum DroStatus dro_dropout_ridge(const struct DroDataset *ds,
                                 double delta,
                                 double *beta_out,
                                 size_t beta_len);

/**
 * Tuned dropout probability `min(max(z,0)·σ/(μ√n), 0.9)`.
 *
 * # Safety
 * `delta_out` must be writable.
 */
enum DroStatus dro_choose_delta(double alpha,
                                size_t n,
                                double mu_hat,
                                double sigma_hat,
                                double *delta_out);

/**
 * Minimizes the exact dropout objective by gradient descent.
 *
 * `phi_out` may be null.
 *
 * # Safety
 * `ds` must be a live handle and `beta_out` must hold `beta_len` doubles.
 */
enum DroStatus dro_fit_exact(const struct DroDataset *ds,
                             enum DroFamily family,
                             double delta,
                             double *beta_out,
                             size_t beta_len,
                             double *phi_out);

/**
 * Runs the randomized multilevel estimator with a Newton inner solver.
 *
 * # Safety
 * `ds` must be a live handle and `out` must be writable.
 */
enum DroStatus dro_mlmc_solve(const struct DroDataset *ds,
                              enum DroFamily family,
                              double delta,
                              double r,
                              size_t m0,
                              size_t replicas,
                              uint64_t seed,
                              struct DroMlmcReport **out);

/**
 * # Safety
 * `report` must be a live report handle and `out` must hold `len` doubles.
 */
enum DroStatus dro_mlmc_report_estimate(const struct DroMlmcReport *report,
                                        double *out,
                                        size_t len);

/**
 * Per-coordinate standard errors of the estimate.
 *
 * # Safety
 * `report` must be a live report handle and `out` must hold `len` doubles.
 */
enum DroStatus dro_mlmc_report_std_errors(const struct DroMlmcReport *report,
                                          double *out,
                                          size_t len);

/**
 * # Safety
 * `report` must be a live report handle or null.
 */
size_t dro_mlmc_report_dim(const struct DroMlmcReport *report);

/**
 * # Safety
 * `report` must be a live report handle or null.
 */
uint64_t dro_mlmc_report_total_draws(const struct DroMlmcReport *report);

/**
 * # Safety
 * `report` must be a live report handle or null.
 */
size_t dro_mlmc_report_replicas(const struct DroMlmcReport *report);

/**
 * # Safety
 * `report` must come from [`dro_mlmc_solve`] and not be freed twice.
 */
void dro_mlmc_report_free(struct DroMlmcReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DROPOUT_DRO_H */
