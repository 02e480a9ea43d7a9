#ifndef GAUSSMON_H
#define GAUSSMON_H

#include <stddef.h>
#include <stdint.h>

/*
 Status codes; the numeric values of 0, 2 and 3 match the CLI exit codes.
 */
typedef enum GmStatus {
  GM_STATUS_OK = 0,
  GM_STATUS_NULL_POINTER = 1,
  GM_STATUS_INVALID_ARGUMENT = 2,
  GM_STATUS_NUMERICAL_FAILURE = 3,
  GM_STATUS_PRECONDITION = 4,
  GM_STATUS_PANIC = 5,
} GmStatus;

/*
 Opaque handle to an integrated covariance path.
 */
typedef struct GmCovTrajectory GmCovTrajectory;

/*
 Opaque model handle: parameters plus the precomputed stationary solution.
 */
typedef struct GmModel GmModel;

/*
 Oscillator and detector parameters.
 */
typedef struct GmParams {
  double m;
  double omega;
  double hbar;
  double k_x;
  double k_p;
  double eta_x;
  double eta_p;
} GmParams;

/*
 Stationary solution. `gamma` is the relaxation matrix in row-major order.
 */
typedef struct GmSteadyState {
  double v_x_inf;
  double c_inf;
  double v_p_inf;
  double d_inf;
  double p_inf;
  double gamma[4];
  double sin_theta;
  double residual;
} GmSteadyState;

/*
 Symmetric 2×2 covariance `[[v_x, c], [c, v_p]]`.
 */
typedef struct GmCovariance {
  double v_x;
  double c;
  double v_p;
} GmCovariance;

/*
 Interval of attainable stationary purities.
 */
typedef struct GmPurityInterval {
  double lo;
  double hi;
} GmPurityInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *gm_version(void);

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call into the library on the same thread.
 */
const char *gm_last_error_message(void);

/*
 Validates `params`, solves the stationary problem and returns a new handle.

 # Safety
 `params` must point to a valid `GmParams`; `out_model` must be writable.
 */
enum GmStatus gm_model_new(const struct GmParams *params, struct GmModel **out_model);

/*
 Releases a model handle; null is ignored.

 # Safety
 `model` must come from `gm_model_new` and not be used afterwards.
 */
void gm_model_free(struct GmModel *model);

/*
 # Safety
 `model` must be a live handle; `out_state` must be writable.
 */
enum GmStatus gm_model_steady_state(const struct GmModel *model, struct GmSteadyState *out_state);

/*
 Closed-form covariance at time `t` from `sigma0`, which must dominate
 the stationary covariance (`GM_STATUS_PRECONDITION` otherwise).

 # Safety
 `model` must be a live handle; `sigma0` readable; `out_sigma` writable.
 */
enum GmStatus gm_model_transient(const struct GmModel *model,
                                 const struct GmCovariance *sigma0,
                                 double t,
                                 struct GmCovariance *out_sigma);

/*
 RK4 integration of the Riccati equation on `[0, t_final]` with step `dt`.

 # Safety
 `model` must be a live handle; `sigma0` readable; `out_traj` writable.
 */
enum GmStatus gm_model_integrate(const struct GmModel *model,
                                 const struct GmCovariance *sigma0,
                                 double t_final,
                                 double dt,
                                 struct GmCovTrajectory **out_traj);

/*
 Reduced Planck constant the model was built with.

 # Safety
 `model` must be a live handle; `out_hbar` writable.
 */
enum GmStatus gm_model_hbar(const struct GmModel *model, double *out_hbar);

/*
 Number of samples in a trajectory; 0 for null.

 # Safety
 `traj` must be null or a live handle.
 */
uintptr_t gm_trajectory_len(const struct GmCovTrajectory *traj);

/*
 Time and covariance of sample `index`.

 # Safety
 `traj` must be a live handle; `out_t` and `out_sigma` writable.
 */
enum GmStatus gm_trajectory_get(const struct GmCovTrajectory *traj,
                                uintptr_t index,
                                double *out_t,
                                struct GmCovariance *out_sigma);

/*
 Releases a trajectory handle; null is ignored.

 # Safety
 `traj` must come from `gm_model_integrate` and not be used afterwards.
 */
void gm_trajectory_free(struct GmCovTrajectory *traj);

/*
 `(√min η, √max η)`.

 # Safety
 `out_interval` must be writable.
 */
enum GmStatus gm_purity_interval(double eta_x, double eta_p, struct GmPurityInterval *out_interval);

/*
 Strength ratio at which the stationary correlation vanishes.

 # Safety
 `out_ratio` must be writable.
 */
enum GmStatus gm_zero_correlation_ratio(double m,
                                        double omega,
                                        double eta_x,
                                        double eta_p,
                                        double *out_ratio);

/*
 Strength product and ratio reaching `target_purity`. A nonpositive
 `q_hint` selects the library default.

 # Safety
 `out_q` and `out_s` must be writable.
 */
enum GmStatus gm_solve_strengths(double target_purity,
                                 double m,
                                 double omega,
                                 double hbar,
                                 double eta_x,
                                 double eta_p,
                                 double q_hint,
                                 double *out_q,
                                 double *out_s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAUSSMON_H */
