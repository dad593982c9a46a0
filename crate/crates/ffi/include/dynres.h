#ifndef DYNRES_H
#define DYNRES_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum DynresStatus {
  DYNRES_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or out-of-range index.
   */
  DYNRES_STATUS_INVALID_ARGUMENT = 1,
  DYNRES_STATUS_INVALID_PARAMETER = 2,
  DYNRES_STATUS_INVALID_STATE = 3,
  DYNRES_STATUS_INTEGRATION = 4,
  DYNRES_STATUS_UNDER_SAMPLED = 5,
  DYNRES_STATUS_TRUNCATION = 6,
  DYNRES_STATUS_CONFIG = 7,
  DYNRES_STATUS_IO = 8,
  /**
   * Internal panic; the handle involved should be freed.
   */
  DYNRES_STATUS_INTERNAL = 9,
} DynresStatus;

/**
 * Opaque parameter set.
 */
typedef struct DynresParams DynresParams;

/**
 * Opaque mean-field trajectory.
 */
typedef struct DynresTrajectory DynresTrajectory;

/**
 * Plain copy of a parameter set.
 */
typedef struct DynresParamValues {
  double g;
  double delta_omega;
  double omega_m;
  double kappa0;
  double b0;
  double gamma1;
  double gamma2;
  double gamma_m;
  double n_bar;
  /**
   * Derived: photon number needed to reach the crossing.
   */
  double n_threshold;
  /**
   * Derived: adiabaticity parameter.
   */
  double nu;
} DynresParamValues;

/**
 * One trajectory sample.
 */
typedef struct DynresPoint {
  /**
   * Time in units of `2 pi / g`.
   */
  double t_over_2pi_g;
  double b_re;
  double b_im;
  /**
   * Instantaneous half detuning.
   */
  double omega;
  double n1;
  double n2;
  double t21_re;
  double t21_im;
  double xi;
} DynresPoint;

/**
 * Fixed- and moving-target fidelities.
 */
typedef struct DynresFidelity {
  double f_fix;
  double f_mov;
} DynresFidelity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the message of the last failed call on this thread, or null.
 * Release with `dynres_string_free`.
 */
char *dynres_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from `dynres_last_error` and not be freed twice.
 */
void dynres_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dynres_version(void);

/**
 * Builds parameters from `g`, `g / delta_omega`, `omega_m / g`,
 * `n_bar / n_thr` and `n_bar`, all undamped.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DynresStatus dynres_params_new(double g,
                                    double ratio_g_over_dw,
                                    double ratio_wm_over_g,
                                    double n_ratio,
                                    double n_bar,
                                    struct DynresParams **out);

/**
 * The reference regime: `omega_m/g = 1e-3`, `g/delta_omega = 1e-2`,
 * `n_bar/n_thr = 5`, `n_bar = 100`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DynresStatus dynres_params_reference(struct DynresParams **out);

/**
 * Sets the three damping rates.
 *
 * # Safety
 * `params` must be a live handle.
 */
enum DynresStatus dynres_params_set_damping(struct DynresParams *params,
                                            double gamma1,
                                            double gamma2,
                                            double gamma_m);

/**
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum DynresStatus dynres_params_values(const struct DynresParams *params,
                                       struct DynresParamValues *out);

/**
 * Frees a parameter handle. Null is ignored.
 *
 * # Safety
 * `params` must come from this library and not be used afterwards.
 */
void dynres_params_free(struct DynresParams *params);

/**
 * Integrates the mean-field model from the prepared state.
 * `t_end_over_2pi_g <= 0` selects 1.2 mechanical periods; `samples` counts
 * uniformly spaced outputs including both ends.
 *
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum DynresStatus dynres_simulate(const struct DynresParams *params,
                                  double t_end_over_2pi_g,
                                  size_t samples,
                                  struct DynresTrajectory **out);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t dynres_trajectory_len(const struct DynresTrajectory *traj);

/**
 * # Safety
 * `traj` must be a live handle and `out` writable.
 */
enum DynresStatus dynres_trajectory_point(const struct DynresTrajectory *traj,
                                          size_t index,
                                          struct DynresPoint *out);

/**
 * Largest `max |T^dagger T - I|` over the run, or NaN for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
double dynres_trajectory_unitarity_defect(const struct DynresTrajectory *traj);

/**
 * Writes the trajectory as CSV.
 *
 * # Safety
 * `traj` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum DynresStatus dynres_trajectory_write_csv(const struct DynresTrajectory *traj,
                                              const char *path);

/**
 * Frees a trajectory handle. Null is ignored.
 *
 * # Safety
 * `traj` must come from this library and not be used afterwards.
 */
void dynres_trajectory_free(struct DynresTrajectory *traj);

/**
 * Fock state `|n>`: both targets give `|T21|^(2n)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DynresStatus dynres_fidelity_fock(double abs_t21, uint32_t n, struct DynresFidelity *out);

/**
 * Coherent state `|alpha>` with `T21 = |T21| e^(i theta)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DynresStatus dynres_fidelity_coherent(double abs_t21,
                                           double theta,
                                           double alpha_re,
                                           double alpha_im,
                                           struct DynresFidelity *out);

/**
 * Cat state; `odd` selects the odd superposition.
 *
 * # Safety
 * `out` must be writable.
 */
enum DynresStatus dynres_fidelity_cat(double abs_t21,
                                      double theta,
                                      double alpha_re,
                                      double alpha_im,
                                      bool odd,
                                      struct DynresFidelity *out);

/**
 * Displaced squeezed state `D(alpha) S(eta) |0>`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DynresStatus dynres_fidelity_displaced_squeezed(double abs_t21,
                                                     double theta,
                                                     double alpha_re,
                                                     double alpha_im,
                                                     double eta_re,
                                                     double eta_im,
                                                     struct DynresFidelity *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNRES_H */
