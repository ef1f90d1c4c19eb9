#ifndef TREEDIFF_H
#define TREEDIFF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum TdStatus {
  TD_STATUS_OK = 0,
  TD_STATUS_NULL_POINTER = 1,
  TD_STATUS_INVALID_ARGUMENT = 2,
  TD_STATUS_PARSE = 3,
  TD_STATUS_STRUCTURE = 4,
  TD_STATUS_BALANCE = 5,
  TD_STATUS_NUMERICAL = 6,
  TD_STATUS_PANIC = 7,
} TdStatus;

// Opaque model handle.
typedef struct TdModel TdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after success.
const char *td_last_error(void);

// Library version as a static NUL-terminated string.
const char *td_version(void);

// Parses a model file. On success `*out` owns a new handle.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum TdStatus td_model_from_json(const char *json, struct TdModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from `td_model_from_json` and not be used afterwards.
void td_model_free(struct TdModel *model);

// Dimensions of the model.
//
// # Safety
// All pointers must be valid.
enum TdStatus td_model_dims(const struct TdModel *model,
                            size_t *classes,
                            size_t *stations,
                            size_t *edges);

// Runs the full model validation: `*is_valid` receives 1 or 0 and
// `*violations_out` the number of violations. The status is `Ok` in both
// cases.
//
// # Safety
// Pointers must be valid.
enum TdStatus td_model_validate(const struct TdModel *model,
                                int32_t *is_valid,
                                size_t *violations_out);

// Edge flows with class totals `alpha` and station totals `beta`, written in
// activity order.
//
// # Safety
// Arrays must hold the stated number of doubles.
enum TdStatus td_solve_psi(const struct TdModel *model,
                           const double *alpha,
                           size_t n_alpha,
                           const double *beta,
                           size_t n_beta,
                           double *psi_out,
                           size_t n_psi);

// Drift `b(x, U)`.
//
// # Safety
// Arrays must hold the stated number of doubles.
enum TdStatus td_drift(const struct TdModel *model,
                       const double *x,
                       size_t n_x,
                       const double *u,
                       size_t n_u,
                       const double *v,
                       size_t n_v,
                       double *b_out,
                       size_t n_b);

// Queue, idleness and edge flows of the state `x` under the control.
//
// # Safety
// Arrays must hold the stated number of doubles.
enum TdStatus td_lift_control(const struct TdModel *model,
                              const double *x,
                              size_t n_x,
                              const double *u,
                              size_t n_u,
                              const double *v,
                              size_t n_v,
                              double *y_out,
                              size_t n_y,
                              double *z_out,
                              size_t n_z,
                              double *psi_out,
                              size_t n_psi);

// `H(x, p)` for the model's cost section and a minimizing control.
//
// # Safety
// Arrays must hold the stated number of doubles.
enum TdStatus td_hamiltonian(const struct TdModel *model,
                             const double *x,
                             const double *p,
                             size_t n,
                             double *h_out,
                             double *u_out,
                             size_t n_u,
                             double *v_out,
                             size_t n_v);

// Monte Carlo discounted cost of the static priority `(class, station)`
// (zero-based) from `x0`.
//
// # Safety
// Arrays must hold the stated number of doubles; outputs must be valid.
enum TdStatus td_mc_cost_static(const struct TdModel *model,
                                const double *x0,
                                size_t n_x,
                                size_t class_,
                                size_t station,
                                size_t n_paths,
                                double dt,
                                uint64_t seed,
                                double *mean_out,
                                double *std_error_out);

// Largest residual and `sup ||x||` of the non-tree counterexample.
//
// # Safety
// Outputs must be valid pointers.
enum TdStatus td_counterexample(double k,
                                double dt,
                                double horizon,
                                double *max_residual_out,
                                double *sup_state_norm_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREEDIFF_H */
