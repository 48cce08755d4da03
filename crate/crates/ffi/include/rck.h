#ifndef RCK_H
#define RCK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum RckStatus {
  RCK_STATUS_OK = 0,
  /**
   * The solve finished but missed its tolerance; the report is still set.
   */
  RCK_STATUS_NOT_CONVERGED = 1,
  RCK_STATUS_INVALID_ARGUMENT = 2,
  RCK_STATUS_NULL_POINTER = 3,
  RCK_STATUS_NUMERICAL = 4,
  RCK_STATUS_BUFFER_TOO_SMALL = 5,
  RCK_STATUS_INTERNAL = 6,
} RckStatus;

/**
 * A finite-outcome return model: K outcomes with probabilities, each a row of n returns.
 */
typedef struct RckModel RckModel;

/**
 * The result of a solve.
 */
typedef struct RckReport RckReport;

/**
 * Knobs for the finite solvers. Start from [`rck_options_default`].
 */
typedef struct RckOptions {
  double eps;
  double kkt_tol;
  double bisect_tol;
  /**
   * Cap on the projected-gradient warm-up.
   */
  size_t max_iters;
  /**
   * Cap on the accelerated polish that follows it; this is where a solve
   * spends most of its iterations.
   */
  size_t polish_iters;
} RckOptions;

/**
 * Scalar summary of a report.
 */
typedef struct RckSummary {
  double growth;
  double growth_std_err;
  double risk_value;
  double lambda;
  double kappa;
  double kkt_residual;
  size_t iterations;
  bool converged;
} RckSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *rck_last_error(void);

struct RckOptions rck_options_default(void);

/**
 * Builds a model from `outcomes` probabilities and a row-major
 * `outcomes x n` return matrix whose last column is cash (all ones).
 *
 * # Safety
 * `probs` must point to `outcomes` doubles, `returns` to `outcomes * n`
 * doubles, and `out` must be writable.
 */
enum RckStatus rck_model_new(const double *probs,
                             const double *returns,
                             size_t outcomes,
                             size_t n,
                             struct RckModel **out);

/**
 * Parses a model from the JSON problem format (`probs`, `returns`).
 *
 * # Safety
 * `json` must point to `len` bytes of UTF-8 and `out` must be writable.
 */
enum RckStatus rck_model_from_json(const char *json, size_t len, struct RckModel **out);

/**
 * # Safety
 * `model` must come from `rck_model_new` or `rck_model_from_json` and not be freed twice.
 */
void rck_model_free(struct RckModel *model);

/**
 * Number of bet components, cash included. Returns 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live model handle.
 */
size_t rck_model_dim(const struct RckModel *model);

/**
 * λ = log β / log α for a drawdown level α and probability β, both in (0, 1).
 *
 * # Safety
 * `out` must be writable.
 */
enum RckStatus rck_lambda_from_alpha_beta(double alpha, double beta, double *out);

/**
 * Growth-optimal bet. `options` may be NULL for defaults.
 *
 * # Safety
 * `model` must be a live handle, `options` NULL or valid, `out` writable.
 */
enum RckStatus rck_solve_kelly(const struct RckModel *model,
                               const struct RckOptions *options,
                               struct RckReport **out);

/**
 * Risk-constrained bet with E(r'b)^(-λ) <= 1.
 *
 * # Safety
 * Same contract as [`rck_solve_kelly`].
 */
enum RckStatus rck_solve_rck(const struct RckModel *model,
                             double lambda,
                             const struct RckOptions *options,
                             struct RckReport **out);

/**
 * Quadratic approximation of the risk-constrained bet, built from the model's exact moments.
 *
 * # Safety
 * Same contract as [`rck_solve_kelly`].
 */
enum RckStatus rck_solve_qrck(const struct RckModel *model,
                              double lambda,
                              const struct RckOptions *options,
                              struct RckReport **out);

/**
 * # Safety
 * `report` must come from one of the solve functions and not be freed twice.
 */
void rck_report_free(struct RckReport *report);

/**
 * Copies the bet into `buf`. `len` must be at least the model dimension.
 *
 * # Safety
 * `report` must be a live handle and `buf` must hold `len` doubles.
 */
enum RckStatus rck_report_bet(const struct RckReport *report, double *buf, size_t len);

/**
 * # Safety
 * `report` must be a live handle and `out` writable.
 */
enum RckStatus rck_report_summary(const struct RckReport *report, struct RckSummary *out);

/**
 * Monte Carlo estimate of Prob(min wealth < alpha) over `horizon` periods.
 *
 * # Safety
 * `model` must be a live handle, `bet` must hold `len` doubles and the
 * out pointers must be writable.
 */
enum RckStatus rck_drawdown_risk(const struct RckModel *model,
                                 const double *bet,
                                 size_t len,
                                 double alpha,
                                 size_t trajectories,
                                 size_t horizon,
                                 uint64_t seed,
                                 double *probability,
                                 double *std_err);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RCK_H */
