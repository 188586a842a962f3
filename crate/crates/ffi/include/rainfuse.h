#ifndef RAINFUSE_H
#define RAINFUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_INVALID_UTF8 = 2,
  RF_STATUS_CONFIG = 3,
  RF_STATUS_DOMAIN = 4,
  RF_STATUS_INGEST = 5,
  RF_STATUS_IO = 6,
  RF_STATUS_NUMERICAL = 7,
  RF_STATUS_PANIC = 8,
} RfStatus;

/**
 * A loaded run configuration.
 */
typedef struct RfConfig RfConfig;

/**
 * Posterior draws from a fit.
 */
typedef struct RfSamples RfSamples;

/**
 * Summary of one scalar parameter.
 */
typedef struct RfSummary {
  double median;
  double q025;
  double q975;
  double ess;
} RfSummary;

/**
 * DIC and its parts.
 */
typedef struct RfDic {
  double dic;
  double d_bar;
  double p_d;
} RfDic;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the previous call on this thread if it failed, else null.
 * The pointer stays valid until the next call on the same thread.
 */
const char *rf_last_error(void);

/**
 * Library version as a static string.
 */
const char *rf_version(void);

/**
 * Load a TOML run configuration from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RfStatus rf_config_load(const char *path, struct RfConfig **out);

/**
 * Parse a configuration from TOML text. Relative paths are taken as is.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum RfStatus rf_config_parse(const char *text, struct RfConfig **out);

/**
 * Override every seed of the configuration.
 *
 * # Safety
 * `cfg` must come from `rf_config_load` or `rf_config_parse`.
 */
enum RfStatus rf_config_set_seed(struct RfConfig *cfg, uint64_t seed);

/**
 * Switch to a model preset (`model1` .. `model5`).
 *
 * # Safety
 * `cfg` must be a live handle; `preset` a NUL-terminated string.
 */
enum RfStatus rf_config_set_preset(struct RfConfig *cfg, const char *preset);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void rf_config_free(struct RfConfig *cfg);

/**
 * Write a synthetic dataset as configured.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum RfStatus rf_simulate(const struct RfConfig *cfg);

/**
 * Fit the configured data and write trace and report files. When `out`
 * is not null it receives a handle to the draws.
 *
 * # Safety
 * `cfg` must be a live handle; `out` null or writable.
 */
enum RfStatus rf_fit(const struct RfConfig *cfg, struct RfSamples **out);

/**
 * Write rain maps, probability maps and DIC from the fitted trace.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum RfStatus rf_predict(const struct RfConfig *cfg);

/**
 * Pool hold-out coverage. Either out-pointer may be null; a stream with no
 * records yields NaN.
 *
 * # Safety
 * `cfg` must be a live handle; out-pointers null or writable.
 */
enum RfStatus rf_validate(const struct RfConfig *cfg, double *gage, double *radar);

/**
 * Number of kept draws.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t rf_samples_len(const struct RfSamples *s);

/**
 * Median, central 95% interval and effective sample size of a scalar such
 * as `c2`, `alpha` or `y[0,12]`.
 *
 * # Safety
 * `s` must be a live handle, `name` a NUL-terminated string, `out` writable.
 */
enum RfStatus rf_samples_summary(const struct RfSamples *s,
                                 const char *name,
                                 struct RfSummary *out);

/**
 * # Safety
 * `s` must be null or a handle not yet freed.
 */
void rf_samples_free(struct RfSamples *s);

/**
 * DIC from the mean deviance and the deviance at the posterior mean.
 *
 * # Safety
 * `out` must be writable.
 */
enum RfStatus rf_dic_from_parts(double d_bar, double d_at_mean, struct RfDic *out);

/**
 * Log-density of a CAR field on an `nx` by `ny` rook lattice with
 * precision `tau2 (D - rho W)`. `y` and `mean` hold `nx * ny` values,
 * x fastest.
 *
 * # Safety
 * `y` and `mean` must point to `nx * ny` readable doubles; `out` writable.
 */
enum RfStatus rf_car_logdensity(size_t nx,
                                size_t ny,
                                double rho,
                                double tau2,
                                const double *y,
                                const double *mean,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAINFUSE_H */
