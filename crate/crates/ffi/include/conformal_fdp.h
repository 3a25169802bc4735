#ifndef CONFORMAL_FDP_H
#define CONFORMAL_FDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfdpStatisticKind {
  CFDP_STATISTIC_KIND_KS = 0,
  CFDP_STATISTIC_KIND_HC = 1,
  CFDP_STATISTIC_KIND_THC = 2,
  CFDP_STATISTIC_KIND_BJ = 3,
  CFDP_STATISTIC_KIND_POINTWISE = 4,
} CfdpStatisticKind;

/**
 * Status codes. Nonzero values match the CLI exit codes where they overlap.
 */
typedef enum CfdpStatus {
  CFDP_STATUS_OK = 0,
  CFDP_STATUS_CONFIG_ERROR = 2,
  CFDP_STATUS_INPUT_ERROR = 3,
  CFDP_STATUS_NUMERIC_ERROR = 4,
  CFDP_STATUS_NULL_POINTER = 5,
  CFDP_STATUS_PANIC = 6,
} CfdpStatus;

typedef enum CfdpDirection {
  CFDP_DIRECTION_UPPER = 0,
  CFDP_DIRECTION_LOWER = 1,
} CfdpDirection;

typedef enum CfdpSamplerMode {
  CFDP_SAMPLER_MODE_CONFORMAL = 0,
  CFDP_SAMPLER_MODE_IID = 1,
} CfdpSamplerMode;

/**
 * Opaque envelope handle.
 */
typedef struct CfdpEnvelope CfdpEnvelope;

/**
 * Opaque envelope-family handle.
 */
typedef struct CfdpFamily CfdpFamily;

/**
 * Summary statistic parameters. `ell`, `r` and `beta` are used by HC/THC,
 * `t0` and `beta` by the pointwise statistic.
 */
typedef struct CfdpStatisticSpec {
  enum CfdpStatisticKind kind;
  double ell;
  double r;
  double beta;
  double t0;
  bool bj_one_sided;
} CfdpStatisticSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Default truncated higher-criticism parameters (`ell = 0.01`, `r = 0.99`,
 * `beta = 0.5`).
 */
struct CfdpStatisticSpec cfdp_statistic_thc_default(void);

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *cfdp_last_error(void);

/**
 * Calibrate an envelope for `P(n, m)` (or for `m` i.i.d. uniforms) from `b`
 * Monte Carlo draws at level `1 - delta`.
 *
 * # Safety
 * `out_envelope` must be valid for writes.
 */
enum CfdpStatus cfdp_envelope_calibrate(size_t n,
                                        size_t m,
                                        size_t b,
                                        double delta,
                                        struct CfdpStatisticSpec spec,
                                        enum CfdpDirection direction,
                                        enum CfdpSamplerMode mode,
                                        uint64_t seed,
                                        struct CfdpEnvelope **out_envelope);

/**
 * Parse an envelope from its JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out_envelope` valid for writes.
 */
enum CfdpStatus cfdp_envelope_from_json(const char *json, struct CfdpEnvelope **out_envelope);

/**
 * Serialize an envelope to JSON. Release the string with
 * [`cfdp_string_free`].
 *
 * # Safety
 * `envelope` must be a live handle; `out_json` valid for writes.
 */
enum CfdpStatus cfdp_envelope_to_json(const struct CfdpEnvelope *envelope, char **out_json);

/**
 * # Safety
 * `envelope` must be a live handle.
 */
enum CfdpStatus cfdp_envelope_cutoff(const struct CfdpEnvelope *envelope, double *out_cutoff);

/**
 * Evaluate the envelope at `len` points. With `monotone` set, evaluates the
 * running maximum instead.
 *
 * # Safety
 * `t` and `out_values` must hold `len` doubles.
 */
enum CfdpStatus cfdp_envelope_eval(const struct CfdpEnvelope *envelope,
                                   const double *t,
                                   size_t len,
                                   bool monotone,
                                   double *out_values);

/**
 * # Safety
 * `envelope` must be null or a handle from this library, freed at most once.
 */
void cfdp_envelope_free(struct CfdpEnvelope *envelope);

/**
 * Calibrate count-scale envelopes `G_1..G_m` on shared conformal draws.
 *
 * # Safety
 * `out_family` must be valid for writes.
 */
enum CfdpStatus cfdp_family_calibrate(size_t n,
                                      size_t m,
                                      size_t b,
                                      double delta,
                                      struct CfdpStatisticSpec spec,
                                      uint64_t seed,
                                      struct CfdpFamily **out_family);

/**
 * # Safety
 * `family` must be a live handle.
 */
enum CfdpStatus cfdp_family_size(const struct CfdpFamily *family, size_t *out_m);

/**
 * # Safety
 * `family` must be null or a handle from this library, freed at most once.
 */
void cfdp_family_free(struct CfdpFamily *family);

/**
 * Upper bound `m0_hat` on the number of null p-values.
 *
 * # Safety
 * `p` must hold `len` doubles.
 */
enum CfdpStatus cfdp_estimate_m0(const struct CfdpFamily *family,
                                 const double *p,
                                 size_t len,
                                 size_t *out_m0);

/**
 * Naive, refined and combined FDP bounds at `grid_len` thresholds. `n` is the
 * calibration size the p-values were built with (0 skips the check).
 * `out_m0` may be null.
 *
 * # Safety
 * `p` must hold `len` doubles; `grid` and the three outputs `grid_len`.
 */
enum CfdpStatus cfdp_fdp_bounds(const struct CfdpFamily *family,
                                const double *p,
                                size_t len,
                                size_t n,
                                const double *grid,
                                size_t grid_len,
                                double *out_naive,
                                double *out_refined,
                                double *out_combined,
                                size_t *out_m0);

/**
 * Exact variance of the conformal ECDF at `t`.
 *
 * # Safety
 * `out_var` must be valid for writes.
 */
enum CfdpStatus cfdp_ecdf_variance(size_t n, size_t m, double t, double *out_var);

/**
 * Benjamini-Hochberg step-up threshold and rejection count.
 *
 * # Safety
 * `p` must hold `len` doubles.
 */
enum CfdpStatus cfdp_bh_threshold(const double *p,
                                  size_t len,
                                  double alpha,
                                  double *out_threshold,
                                  size_t *out_rejections);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library, freed at most once.
 */
void cfdp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONFORMAL_FDP_H */
