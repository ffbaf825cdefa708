#ifndef EXCESS_DEATHS_H
#define EXCESS_DEATHS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ExdExtrapolation {
  EXD_EXTRAPOLATION_NONE = 0,
  EXD_EXTRAPOLATION_LINEAR = 1,
  EXD_EXTRAPOLATION_HOLD = 2,
} ExdExtrapolation;

typedef enum ExdStatus {
  EXD_STATUS_OK = 0,
  EXD_STATUS_NULL_POINTER = 1,
  EXD_STATUS_INVALID_ARGUMENT = 2,
  EXD_STATUS_DOMAIN = 3,
  EXD_STATUS_INPUT = 4,
  EXD_STATUS_RANK_DEFICIENT = 5,
  EXD_STATUS_NOT_POSITIVE_DEFINITE = 6,
  EXD_STATUS_NON_CONVERGENCE = 7,
  EXD_STATUS_NUMERICAL = 8,
  EXD_STATUS_PANIC = 9,
} ExdStatus;

/**
 * Opaque fitted model.
 */
typedef struct ExdModel2 ExdModel2;

typedef struct ExdModel1 {
  double lambda_mle;
  double rho_mle;
  double excess_mle;
  double ci_rho_lo;
  double ci_rho_hi;
  double ci_excess_lo;
  double ci_excess_hi;
} ExdModel1;

typedef struct ExdFitSummary {
  size_t nobs;
  size_t num_periods;
  double deviance;
  double edf_total;
  double dispersion;
  size_t iterations;
  bool converged;
} ExdFitSummary;

typedef struct ExdPeriodEffect {
  /**
   * Log-rate coefficient.
   */
  double estimate;
  double se;
  double z;
  double p;
  /**
   * `exp(estimate)`.
   */
  double effect;
} ExdPeriodEffect;

typedef struct ExdInterval {
  double estimate;
  double pointwise_lo;
  double pointwise_hi;
  double simultaneous_lo;
  double simultaneous_hi;
} ExdInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *exd_version(void);

/**
 * Message for the last failed call on this thread, or NULL after a
 * successful call. Valid until the next call into the library.
 */
const char *exd_last_error(void);

/**
 * Deaths per 1000 person-years.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum ExdStatus exd_mortality_rate(uint64_t deaths, double population, double *out);

/**
 * Before/after comparison: `x` deaths over `m` days before, `y` over `n`
 * days after.
 *
 * # Safety
 * `out` must be a valid pointer to an `ExdModel1`.
 */
enum ExdStatus exd_model1(uint64_t x,
                          uint64_t m,
                          uint64_t y,
                          uint64_t n,
                          double alpha,
                          struct ExdModel1 *out);

/**
 * Baseline rate maximizing the likelihood with the excess rate held at `rho0`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum ExdStatus exd_restricted_lambda(uint64_t x,
                                     uint64_t m,
                                     uint64_t y,
                                     uint64_t n,
                                     double rho0,
                                     double *out);

/**
 * Likelihood ratio statistic for the excess rate equal to `rho0`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum ExdStatus exd_neg2_log_lrt(uint64_t x,
                                uint64_t m,
                                uint64_t y,
                                uint64_t n,
                                double rho0,
                                double *out);

/**
 * Fit the penalized model to in-memory daily series starting at `start`.
 * Periods are monthly from `emergency` through the last day of data.
 * `counterfactual` may be NULL, in which case `population` is used.
 *
 * # Safety
 * Array pointers must reference `len` elements; `out` must be valid.
 */
enum ExdStatus exd_model2_fit(const char *start,
                              const uint64_t *deaths,
                              const double *population,
                              const double *counterfactual,
                              size_t len,
                              const char *emergency,
                              struct ExdModel2 **out);

/**
 * Fit from CSV files. `movements` may be NULL for no migration adjustment.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be valid.
 */
enum ExdStatus exd_model2_fit_files(const char *deaths,
                                    const char *anchors,
                                    const char *movements,
                                    const char *emergency,
                                    enum ExdExtrapolation extrapolate,
                                    struct ExdModel2 **out);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from an `exd_model2_fit*` call and not be freed twice.
 */
void exd_model2_free(struct ExdModel2 *model);

/**
 * # Safety
 * `model` and `out` must be valid.
 */
enum ExdStatus exd_model2_summary(const struct ExdModel2 *model, struct ExdFitSummary *out);

/**
 * Wald summary of period `period` (1-based).
 *
 * # Safety
 * `model` and `out` must be valid.
 */
enum ExdStatus exd_model2_period(const struct ExdModel2 *model,
                                 size_t period,
                                 struct ExdPeriodEffect *out);

/**
 * Number of days from the emergency through the last period.
 *
 * # Safety
 * `model` must be valid or NULL (returns 0).
 */
size_t exd_model2_excess_days(const struct ExdModel2 *model);

/**
 * Write the point estimate of daily excess deaths for each day from the
 * emergency into `buf`, which must hold `exd_model2_excess_days` values.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum ExdStatus exd_model2_daily_excess(const struct ExdModel2 *model, double *buf, size_t len);

/**
 * Cumulative excess deaths from the emergency through the last period,
 * with intervals from `draws` posterior draws.
 *
 * # Safety
 * `model` and `out` must be valid.
 */
enum ExdStatus exd_model2_cumulative_excess(const struct ExdModel2 *model,
                                            size_t draws,
                                            uint64_t seed,
                                            double alpha,
                                            struct ExdInterval *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXCESS_DEATHS_H */
