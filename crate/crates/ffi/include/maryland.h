#ifndef MARYLAND_H
#define MARYLAND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible entry point.
 */
typedef enum MlStatus {
  ML_STATUS_OK = 0,
  ML_STATUS_NULL_POINTER = 1,
  ML_STATUS_INVALID_ARGUMENT = 2,
  ML_STATUS_BUFFER_TOO_SMALL = 3,
  /**
   * A geometric or regularity hypothesis does not hold.
   */
  ML_STATUS_HYPOTHESIS_FAILED = 4,
  /**
   * Gap collapse, degenerate diagonal, lost branch and similar.
   */
  ML_STATUS_NUMERICAL = 5,
  ML_STATUS_PANIC = 6,
} MlStatus;

/**
 * A library example: sampling function, frequency and blocks.
 */
typedef struct MlExample MlExample;

/**
 * A finite-volume operator H(x) on a box.
 */
typedef struct MlOperator MlOperator;

/**
 * Moving-block families of an example built at one eps.
 */
typedef struct MlRun MlRun;

/**
 * A sampling function f.
 */
typedef struct MlSampling MlSampling;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ml_version(void);

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminating NUL; 0 when the last call succeeded.
 */
size_t ml_last_error_length(void);

/**
 * Copies the last error message, NUL-terminated, into `buf`.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum MlStatus ml_last_error_message(char *buf, size_t len);

/**
 * f(x) = scale * tan(pi x).
 *
 * # Safety
 * `out` must be a valid pointer to write a handle to.
 */
enum MlStatus ml_sampling_tangent(double scale, struct MlSampling **out);

/**
 * One flat piece `[left, left + length]` at `value` with tangent flanks.
 * Pass infinity for `e_reg` to skip the large-value regularity floor.
 *
 * # Safety
 * `out` must be a valid pointer to write a handle to.
 */
enum MlStatus ml_sampling_single_flat(double left,
                                      double length,
                                      double value,
                                      double scale,
                                      double e_reg,
                                      struct MlSampling **out);

/**
 * # Safety
 * `f` must be a live handle and `out` writable.
 */
enum MlStatus ml_sampling_eval(const struct MlSampling *f, double x, double *out);

/**
 * # Safety
 * `f` must be NULL or a handle not yet freed.
 */
void ml_sampling_free(struct MlSampling *f);

/**
 * H(x) = eps * Laplacian + f(x + omega.n) on the box `[lo, hi]` in `dim`
 * dimensions.
 *
 * # Safety
 * `omega`, `lo` and `hi` must each point to `dim` values; `out` writable.
 */
enum MlStatus ml_operator_build(const struct MlSampling *f,
                                const double *omega,
                                const int64_t *lo,
                                const int64_t *hi,
                                size_t dim,
                                double eps,
                                double x,
                                struct MlOperator **out);

/**
 * Number of sites of the operator's box; 0 for NULL.
 *
 * # Safety
 * `op` must be NULL or a live handle.
 */
size_t ml_operator_dim(const struct MlOperator *op);

/**
 * Sorted eigenvalues into `out`, which must hold `ml_operator_dim(op)` values.
 *
 * # Safety
 * `op` must be a live handle and `out` must point to `len` writable values.
 */
enum MlStatus ml_operator_eigenvalues(const struct MlOperator *op, double *out, size_t len);

/**
 * Rayleigh-Schrödinger energy through `order`, anchored at site `base`.
 *
 * # Safety
 * `op` must be a live handle, `base` must point to `dim` values and `out`
 * must be writable.
 */
enum MlStatus ml_operator_series_energy(const struct MlOperator *op,
                                        const int64_t *base,
                                        size_t dim,
                                        size_t order,
                                        double *out);

/**
 * # Safety
 * `op` must be NULL or a handle not yet freed.
 */
void ml_operator_free(struct MlOperator *op);

/**
 * Looks up a library example ("example1", "example5-k2", ...).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` writable.
 */
enum MlStatus ml_example_new(const char *name, struct MlExample **out);

/**
 * Runs the hypothesis checklist. `passed` receives whether every item holds;
 * the first failing item is reported as the last error.
 *
 * # Safety
 * `ex` must be a live handle and `passed` writable.
 */
enum MlStatus ml_example_verify(const struct MlExample *ex,
                                double eps,
                                size_t grid_points,
                                bool *passed);

/**
 * Builds the moving-block families at `eps` on a `grid_points` phase grid.
 *
 * # Safety
 * `ex` must be a live handle and `out` writable.
 */
enum MlStatus ml_example_build(const struct MlExample *ex,
                               double eps,
                               size_t grid_points,
                               struct MlRun **out);

/**
 * # Safety
 * `ex` must be NULL or a handle not yet freed.
 */
void ml_example_free(struct MlExample *ex);

/**
 * Number of blocks in a run; 0 for NULL.
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
size_t ml_run_block_count(const struct MlRun *run);

/**
 * Smallest singular-block eigenvalue gap of `block`, in units of eps.
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum MlStatus ml_run_separation(const struct MlRun *run, size_t block, double *out);

/**
 * f2'(y) after conjugation, at a phase `y` covered by one of the blocks.
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum MlStatus ml_run_f2_prime(const struct MlRun *run, double phase, double *out);

/**
 * # Safety
 * `run` must be NULL or a handle not yet freed.
 */
void ml_run_free(struct MlRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARYLAND_H */
