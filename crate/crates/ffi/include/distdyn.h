#ifndef DISTDYN_H
#define DISTDYN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DdMetric {
  DD_METRIC_L1 = 0,
  DD_METRIC_L2 = 1,
  DD_METRIC_LINF = 2,
  DD_METRIC_HELLINGER = 3,
} DdMetric;

/**
 * Result of every fallible call.
 */
typedef enum DdStatus {
  DD_STATUS_OK = 0,
  DD_STATUS_IO = 1,
  DD_STATUS_CONFIG = 2,
  DD_STATUS_DATA = 3,
  DD_STATUS_NUMERICAL = 4,
  /**
   * A required pointer argument was null.
   */
  DD_STATUS_NULL_POINTER = 5,
  /**
   * The library panicked; this is a bug.
   */
  DD_STATUS_INTERNAL = 6,
} DdStatus;

typedef struct DdDensity DdDensity;

typedef struct DdKernel DdKernel;

typedef struct DdPanel DdPanel;

typedef struct DdSample DdSample;

/**
 * Evaluation grid and smoothing settings.
 */
typedef struct DdEstimation {
  double lo;
  double hi;
  size_t points;
  /**
   * Adaptive-bandwidth sensitivity in [0, 1]; 0 gives a fixed bandwidth.
   */
  double alpha;
  /**
   * Conditioning-marginal floor below which kernel rows are flagged.
   */
  double floor;
} DdEstimation;

typedef struct DdTestResult {
  double observed;
  double asl;
  size_t replications;
  uint64_t seed;
} DdTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *dd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dd_version(void);

/**
 * Defaults used by the empirical application: grid [-1, 4] with 100
 * points, alpha 0.5, floor 1e-8.
 */
struct DdEstimation dd_estimation_default(void);

/**
 * Reads a long-format panel (one row per country and year) from a
 * delimited text file with a header row.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings; `out` must be a
 * valid pointer to writable storage.
 */
enum DdStatus dd_panel_load(const char *path,
                            const char *id_column,
                            const char *year_column,
                            const char *value_column,
                            struct DdPanel **out);

/**
 * # Safety
 * `panel` must be null or a handle from [`dd_panel_load`] not yet freed.
 */
void dd_panel_free(struct DdPanel *panel);

/**
 * # Safety
 * `panel` must be a live panel handle.
 */
size_t dd_panel_n_countries(const struct DdPanel *panel);

/**
 * # Safety
 * `panel` must be a live panel handle; `first` and `last` must be writable.
 */
enum DdStatus dd_panel_years(const struct DdPanel *panel, int32_t *first, int32_t *last);

/**
 * Transition tuples starting in every year of `first_start..=last_start`
 * (a single year when the two are equal). `arity` is 2 for pairs and 3 for
 * triples.
 *
 * # Safety
 * `panel` must be a live panel handle and `out` writable.
 */
enum DdStatus dd_sample_from_panel(const struct DdPanel *panel,
                                   int32_t first_start,
                                   int32_t last_start,
                                   uint32_t tau,
                                   size_t arity,
                                   struct DdSample **out);

/**
 * Sample from raw columns. `z` may be null for pairs.
 *
 * # Safety
 * `x`, `y` (and `z` when non-null) must point to `n` readable doubles.
 */
enum DdStatus dd_sample_from_arrays(const double *x,
                                    const double *y,
                                    const double *z,
                                    size_t n,
                                    uint32_t tau,
                                    struct DdSample **out);

/**
 * # Safety
 * `sample` must be null or a live sample handle.
 */
size_t dd_sample_len(const struct DdSample *sample);

/**
 * # Safety
 * `sample` must be null or a sample handle not yet freed.
 */
void dd_sample_free(struct DdSample *sample);

/**
 * Conditional kernel of the sample's second column given its first.
 *
 * # Safety
 * `sample` and `est` must be valid; `out` writable.
 */
enum DdStatus dd_kernel_estimate(const struct DdSample *sample,
                                 const struct DdEstimation *est,
                                 struct DdKernel **out);

/**
 * Two-step kernel: `b` applied first, then `a`.
 *
 * # Safety
 * `a` and `b` must be live kernel handles; `out` writable.
 */
enum DdStatus dd_kernel_compose(const struct DdKernel *a,
                                const struct DdKernel *b,
                                struct DdKernel **out);

/**
 * Grid points per axis (the kernel is `points × points`).
 *
 * # Safety
 * `kernel` must be null or a live kernel handle.
 */
size_t dd_kernel_points(const struct DdKernel *kernel);

/**
 * Copies the row-major kernel values (row = conditioning point) into
 * `out`, which must hold `points * points` doubles.
 *
 * # Safety
 * `kernel` must be live; `out` must point to `len` writable doubles.
 */
enum DdStatus dd_kernel_values(const struct DdKernel *kernel, double *out, size_t len);

/**
 * Copies the conditioning marginal into `out` (`points` doubles).
 *
 * # Safety
 * `kernel` must be live; `out` must point to `len` writable doubles.
 */
enum DdStatus dd_kernel_marginal(const struct DdKernel *kernel, double *out, size_t len);

/**
 * # Safety
 * `kernel` must be null or a kernel handle not yet freed.
 */
void dd_kernel_free(struct DdKernel *kernel);

/**
 * Weighted divergence between two kernels on the same grid. `weight` may
 * be null, in which case the conditioning marginal of `a` is used.
 *
 * # Safety
 * `a`, `b` must be live kernels; `weight` null or `points` readable
 * doubles; `out` writable.
 */
enum DdStatus dd_divergence(const struct DdKernel *a,
                            const struct DdKernel *b,
                            const double *weight,
                            enum DdMetric metric,
                            double floor,
                            double *out);

/**
 * Ergodic density of a kernel by power iteration from the uniform density.
 * `tol <= 0` and `max_iter == 0` select the defaults (1e-9, 10000).
 *
 * # Safety
 * `kernel` must be live; `out` writable.
 */
enum DdStatus dd_ergodic(const struct DdKernel *kernel,
                         double tol,
                         size_t max_iter,
                         struct DdDensity **out);

/**
 * Ergodic density of the kernel estimated on `sample`, with pointwise
 * bootstrap bands at `coverage` from `replications` (at least 100)
 * resamples.
 *
 * # Safety
 * `sample` and `est` must be valid; `out` writable.
 */
enum DdStatus dd_ergodic_bands(const struct DdSample *sample,
                               const struct DdEstimation *est,
                               size_t replications,
                               double coverage,
                               uint64_t seed,
                               struct DdDensity **out);

/**
 * # Safety
 * `density` must be null or a live density handle.
 */
size_t dd_density_len(const struct DdDensity *density);

/**
 * # Safety
 * `density` must be live; `out` must point to `len` writable doubles.
 */
enum DdStatus dd_density_values(const struct DdDensity *density, double *out, size_t len);

/**
 * Copies the lower and upper band; fails with `DD_STATUS_CONFIG` when the
 * density has no bands.
 *
 * # Safety
 * `density` must be live; `lo` and `hi` must each point to `len` writable
 * doubles.
 */
enum DdStatus dd_density_bands(const struct DdDensity *density, double *lo, double *hi, size_t len);

/**
 * # Safety
 * `density` must be null or a density handle not yet freed.
 */
void dd_density_free(struct DdDensity *density);

/**
 * Bootstrap test that two samples of pairs share one transition kernel.
 *
 * # Safety
 * `first`, `second` and `est` must be valid; `out` writable.
 */
enum DdStatus dd_test_homogeneity(const struct DdSample *first,
                                  const struct DdSample *second,
                                  enum DdMetric metric,
                                  const struct DdEstimation *est,
                                  size_t replications,
                                  uint64_t seed,
                                  struct DdTestResult *out);

/**
 * Bootstrap test of the first-order (Chapman-Kolmogorov) property on a
 * sample of triples.
 *
 * # Safety
 * `triples` and `est` must be valid; `out` writable.
 */
enum DdStatus dd_test_first_order(const struct DdSample *triples,
                                  enum DdMetric metric,
                                  const struct DdEstimation *est,
                                  size_t replications,
                                  uint64_t seed,
                                  struct DdTestResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTDYN_H */
