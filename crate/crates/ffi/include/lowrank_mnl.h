#ifndef LOWRANK_MNL_H
#define LOWRANK_MNL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum LmnlStatus {
  LMNL_STATUS_OK = 0,
  /**
   * Invalid argument, malformed file contents, or a size limit.
   */
  LMNL_STATUS_INVALID_INPUT = 2,
  /**
   * The solver hit a non-finite value.
   */
  LMNL_STATUS_NUMERICAL = 3,
  /**
   * A file could not be read or written.
   */
  LMNL_STATUS_IO = 4,
  LMNL_STATUS_NULL_POINTER = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  LMNL_STATUS_INTERNAL = 6,
} LmnlStatus;

typedef enum LmnlSetting {
  LMNL_SETTING_COLLAB = 0,
  LMNL_SETTING_BUNDLED = 1,
} LmnlSetting;

/**
 * Observations of either setting.
 */
typedef struct LmnlDataset LmnlDataset;

/**
 * Output of [`lmnl_fit`].
 */
typedef struct LmnlFitResult LmnlFitResult;

/**
 * Dense row-major matrix.
 */
typedef struct LmnlMatrix LmnlMatrix;

/**
 * Rounds of ordered index triples from [`lmnl_triple_partition`].
 */
typedef struct LmnlPartition LmnlPartition;

/**
 * Solver settings. Obtain defaults from [`lmnl_solver_options_default`].
 */
typedef struct LmnlSolverOptions {
  /**
   * Explicit weight, or the multiplier of the default weight when
   * `use_default_lambda` is set.
   */
  double lambda;
  bool use_default_lambda;
  double rel_tol;
  size_t max_iter;
  bool accelerate;
} LmnlSolverOptions;

/**
 * Inputs to [`lmnl_bounds`]. Zero means "absent" for `rank`, `k1`, `k2`;
 * `q <= 0` means exact rank. `samples` is `k` (collab) or `n` (bundled).
 */
typedef struct LmnlBoundsInput {
  enum LmnlSetting setting;
  size_t d1;
  size_t d2;
  size_t rank;
  size_t samples;
  size_t k1;
  size_t k2;
  double alpha;
  double q;
  double rho_q;
} LmnlBoundsInput;

/**
 * Outputs of [`lmnl_bounds`]. Entries that do not apply are NaN.
 */
typedef struct LmnlBounds {
  double reference_lambda;
  double upper;
  /**
   * Lower bound with its unspecified universal constant set to 1.
   */
  double lower;
  double crossover_samples;
  bool sample_regime_ok;
} LmnlBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if the last
 * status-returning call succeeded. Valid until the next such call.
 */
const char *lmnl_last_error_message(void);

/**
 * Copies `rows * cols` row-major values into a new matrix.
 */
enum LmnlStatus lmnl_matrix_new(size_t rows,
                                size_t cols,
                                const double *data,
                                struct LmnlMatrix **out);

void lmnl_matrix_free(struct LmnlMatrix *m);

/**
 * Number of rows, or 0 for a null handle.
 */
size_t lmnl_matrix_rows(const struct LmnlMatrix *m);

/**
 * Number of columns, or 0 for a null handle.
 */
size_t lmnl_matrix_cols(const struct LmnlMatrix *m);

/**
 * Copies the row-major entries into `out`, which must hold `len >= rows * cols` values.
 */
enum LmnlStatus lmnl_matrix_copy_data(const struct LmnlMatrix *m, double *out, size_t len);

enum LmnlStatus lmnl_matrix_read_csv(const char *path, struct LmnlMatrix **out);

enum LmnlStatus lmnl_matrix_write_csv(const struct LmnlMatrix *m, const char *path);

/**
 * Random rank-`rank` preference matrix with largest entry magnitude `alpha`.
 */
enum LmnlStatus lmnl_synth_lowrank(enum LmnlSetting setting,
                                   size_t d1,
                                   size_t d2,
                                   size_t rank,
                                   double alpha,
                                   uint64_t seed,
                                   struct LmnlMatrix **out);

/**
 * One `k`-wise ranking per row of `theta`, which must have zero row sums.
 */
enum LmnlStatus lmnl_sample_collab(const struct LmnlMatrix *theta,
                                   size_t k,
                                   uint64_t seed,
                                   struct LmnlDataset **out);

/**
 * `n` bundled purchases; `theta` must have zero total sum.
 */
enum LmnlStatus lmnl_sample_bundled(const struct LmnlMatrix *theta,
                                    size_t k1,
                                    size_t k2,
                                    size_t n,
                                    uint64_t seed,
                                    struct LmnlDataset **out);

enum LmnlStatus lmnl_dataset_read_jsonl(enum LmnlSetting setting,
                                        const char *path,
                                        size_t d1,
                                        size_t d2,
                                        struct LmnlDataset **out);

enum LmnlStatus lmnl_dataset_write_jsonl(const struct LmnlDataset *data, const char *path);

enum LmnlStatus lmnl_dataset_setting(const struct LmnlDataset *data, enum LmnlSetting *out);

void lmnl_dataset_free(struct LmnlDataset *data);

/**
 * Normalized negative log-likelihood of `theta` on `data`.
 */
enum LmnlStatus lmnl_nll(const struct LmnlMatrix *theta,
                         const struct LmnlDataset *data,
                         double *out);

/**
 * Gradient of [`lmnl_nll`] as a new matrix.
 */
enum LmnlStatus lmnl_gradient(const struct LmnlMatrix *theta,
                              const struct LmnlDataset *data,
                              struct LmnlMatrix **out);

/**
 * Default weight (multiplier 1), tolerance 1e-8, 5000 iterations, no momentum.
 */
struct LmnlSolverOptions lmnl_solver_options_default(void);

/**
 * Fits the regularized estimator. A null `options` uses the defaults.
 */
enum LmnlStatus lmnl_fit(const struct LmnlDataset *data,
                         const struct LmnlSolverOptions *options,
                         struct LmnlFitResult **out);

/**
 * Canonicalized estimate as a new matrix.
 */
enum LmnlStatus lmnl_fit_result_estimate(const struct LmnlFitResult *res, struct LmnlMatrix **out);

size_t lmnl_fit_result_iterations(const struct LmnlFitResult *res);

bool lmnl_fit_result_converged(const struct LmnlFitResult *res);

size_t lmnl_fit_result_rank(const struct LmnlFitResult *res);

/**
 * Weight used by the fit, or NaN for a null handle.
 */
double lmnl_fit_result_lambda(const struct LmnlFitResult *res);

/**
 * Final objective, or NaN for a null handle.
 */
double lmnl_fit_result_objective(const struct LmnlFitResult *res);

/**
 * Length of the objective trace (iterations + 1).
 */
size_t lmnl_fit_result_trace_len(const struct LmnlFitResult *res);

enum LmnlStatus lmnl_fit_result_copy_trace(const struct LmnlFitResult *res,
                                           double *out,
                                           size_t len);

void lmnl_fit_result_free(struct LmnlFitResult *res);

/**
 * Rescaled Frobenius error between canonical representatives.
 */
enum LmnlStatus lmnl_rmse(const struct LmnlMatrix *estimate,
                          const struct LmnlMatrix *truth,
                          enum LmnlSetting setting,
                          double *out);

/**
 * Reference weight, error bounds, crossover sample size and regime check.
 */
enum LmnlStatus lmnl_bounds(const struct LmnlBoundsInput *input, struct LmnlBounds *out);

enum LmnlStatus lmnl_triple_partition(size_t k, struct LmnlPartition **out);

size_t lmnl_partition_num_rounds(const struct LmnlPartition *p);

/**
 * Number of triples in round `round`, or 0 when out of range.
 */
size_t lmnl_partition_round_len(const struct LmnlPartition *p, size_t round);

/**
 * Writes round `round` as consecutive 1-based `(a, b, c)` index triples;
 * `out` must hold `len >= 3 * round_len` values.
 */
enum LmnlStatus lmnl_partition_copy_round(const struct LmnlPartition *p,
                                          size_t round,
                                          size_t *out,
                                          size_t len);

void lmnl_partition_free(struct LmnlPartition *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOWRANK_MNL_H */
