#ifndef DRESS_H
#define DRESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DressStatus {
  DRESS_STATUS_OK = 0,
  DRESS_STATUS_NULL_POINTER = 1,
  /**
   * Invalid arguments (shape mismatch, bad hyperparameters, ...).
   */
  DRESS_STATUS_CONTRACT = 2,
  DRESS_STATUS_SINGULAR_SYSTEM = 3,
  DRESS_STATUS_NON_CONVERGENCE = 4,
  /**
   * Iterates diverged, e.g. separable logistic data.
   */
  DRESS_STATUS_DIVERGENCE = 5,
  DRESS_STATUS_RANK_DEFICIENT = 6,
  DRESS_STATUS_DEGENERATE_TEST = 7,
  DRESS_STATUS_EXPERIMENT_UNSTABLE = 8,
  DRESS_STATUS_INGEST = 9,
  DRESS_STATUS_IO = 10,
  /**
   * A Rust panic was caught at the boundary.
   */
  DRESS_STATUS_PANIC = 99,
} DressStatus;

typedef enum DressModel {
  DRESS_MODEL_LINEAR_GAUSSIAN = 0,
  DRESS_MODEL_LOGISTIC = 1,
} DressModel;

typedef enum DressMoment {
  /**
   * `η = φ`.
   */
  DRESS_MOMENT_NAIVE = 0,
  /**
   * `η = φ / (1 + (n'/n) w)`.
   */
  DRESS_MOMENT_QIN = 1,
} DressMoment;

/**
 * Opaque result of a weighted or DRESS fit.
 */
typedef struct DressFit DressFit;

/**
 * Opaque kernel density-ratio fit.
 */
typedef struct DressKernelRatio DressKernelRatio;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dress_version(void);

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next `dress_*` call on the same thread.
 */
const char *dress_last_error_message(void);

/**
 * Unweighted maximum-likelihood fit.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `y` to `n` doubles, `out` to a writable
 * handle pointer. Logistic responses must be 0 or 1.
 */
enum DressStatus dress_fit_mle(enum DressModel model,
                               const double *x,
                               size_t n,
                               size_t d,
                               const double *y,
                               struct DressFit **out);

/**
 * Weighted maximum-likelihood fit with positive `weights` (length `n`).
 *
 * # Safety
 * As [`dress_fit_mle`], plus `weights` must point to `n` doubles.
 */
enum DressStatus dress_fit_weighted_mle(enum DressModel model,
                                        const double *x,
                                        size_t n,
                                        size_t d,
                                        const double *y,
                                        const double *weights,
                                        struct DressFit **out);

/**
 * DRESS with the log-linear ratio `exp(θᵀφ(x))` on the polynomial basis of
 * `degree` (features `1, x, x², …`).
 *
 * # Safety
 * As [`dress_fit_mle`], plus `unlabeled_x` must point to `nprime * d` doubles.
 */
enum DressStatus dress_fit_dress_poly(enum DressModel model,
                                      const double *x,
                                      size_t n,
                                      size_t d,
                                      const double *y,
                                      const double *unlabeled_x,
                                      size_t nprime,
                                      size_t degree,
                                      enum DressMoment moment,
                                      struct DressFit **out);

/**
 * DRESS with KuLSIF weights. `bandwidth <= 0` selects the median heuristic,
 * `lambda <= 0` selects the ridge by cross-validation.
 *
 * # Safety
 * As [`dress_fit_dress_poly`].
 */
enum DressStatus dress_fit_dress_kulsif(enum DressModel model,
                                        const double *x,
                                        size_t n,
                                        size_t d,
                                        const double *y,
                                        const double *unlabeled_x,
                                        size_t nprime,
                                        double bandwidth,
                                        double lambda,
                                        uint64_t seed,
                                        struct DressFit **out);

/**
 * Length of the parameter vector of a fit (0 for NULL).
 *
 * # Safety
 * `fit` must be NULL or a live handle.
 */
size_t dress_fit_param_dim(const struct DressFit *fit);

/**
 * Copy `α̂` into `out` (capacity `len`, at least the parameter dimension).
 *
 * # Safety
 * `fit` must be a live handle and `out` valid for `len` writes.
 */
enum DressStatus dress_fit_alpha(const struct DressFit *fit, double *out, size_t len);

/**
 * Length of `θ̂` (0 when the fit has no parametric ratio).
 *
 * # Safety
 * `fit` must be NULL or a live handle.
 */
size_t dress_fit_theta_dim(const struct DressFit *fit);

/**
 * Copy `θ̂` into `out`; `Contract` when the fit has no parametric ratio.
 *
 * # Safety
 * `fit` must be a live handle and `out` valid for `len` writes.
 */
enum DressStatus dress_fit_theta(const struct DressFit *fit, double *out, size_t len);

/**
 * Residual max-norm of the (weighted) score equation at `α̂` (NaN for NULL).
 *
 * # Safety
 * `fit` must be NULL or a live handle.
 */
double dress_fit_residual(const struct DressFit *fit);

/**
 * Newton iterations used by the final stage.
 *
 * # Safety
 * `fit` must be NULL or a live handle.
 */
size_t dress_fit_iterations(const struct DressFit *fit);

/**
 * Release a fit. NULL is ignored.
 *
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void dress_fit_free(struct DressFit *fit);

/**
 * Fit a KuLSIF ratio `q(x)/p(x)` from `labeled_x` (`n × d`, density `p`) and
 * `unlabeled_x` (`nprime × d`, density `q`).
 *
 * # Safety
 * Pointers must be valid for the stated sizes; `out` for one write.
 */
enum DressStatus dress_kulsif_fit(const double *labeled_x,
                                  size_t n,
                                  size_t d,
                                  const double *unlabeled_x,
                                  size_t nprime,
                                  double bandwidth,
                                  double lambda,
                                  uint64_t seed,
                                  struct DressKernelRatio **out);

/**
 * Evaluate the clamped ratio at `m` points (`m × d`, row-major) into `out`.
 *
 * # Safety
 * `ratio` must be a live handle, `x` valid for `m * d` reads and `out` for `m` writes.
 */
enum DressStatus dress_kulsif_eval(const struct DressKernelRatio *ratio,
                                   const double *x,
                                   size_t m,
                                   double *out);

/**
 * Gaussian bandwidth used by a kernel fit (NaN for NULL).
 *
 * # Safety
 * `ratio` must be NULL or a live handle.
 */
double dress_kulsif_bandwidth(const struct DressKernelRatio *ratio);

/**
 * Release a kernel fit. NULL is ignored.
 *
 * # Safety
 * `ratio` must be NULL or a handle not yet freed.
 */
void dress_kulsif_free(struct DressKernelRatio *ratio);

/**
 * One-sample t-test of `differences` against 0, upper-tailed.
 *
 * # Safety
 * `differences` must be valid for `len` reads; `t` and `p` for one write each.
 */
enum DressStatus dress_paired_t_test(const double *differences,
                                     size_t len,
                                     double *t,
                                     double *p_one_tailed);

/**
 * Asymptotic improvement matrix for `η ∝ φ` from evaluation samples
 * `ubar` (`samples × d`) and `phi` (`samples × r`), written row-major to
 * `out` (`d × d`).
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum DressStatus dress_diff_eta_phi(const double *ubar,
                                    size_t samples,
                                    size_t d,
                                    const double *phi,
                                    size_t r,
                                    size_t n,
                                    size_t nprime,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRESS_H */
