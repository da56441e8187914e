#ifndef PCE_LQR_H
#define PCE_LQR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible function.
 */
typedef enum PceStatus {
  PCE_STATUS_OK = 0,
  PCE_STATUS_NULL_POINTER = 1,
  PCE_STATUS_INVALID_ARGUMENT = 2,
  PCE_STATUS_CONFIG = 3,
  PCE_STATUS_INADMISSIBLE = 4,
  PCE_STATUS_NUMERICAL = 5,
  PCE_STATUS_PANIC = 6,
} PceStatus;

/*
 How an optimization run ended.
 */
typedef enum PceTermination {
  PCE_TERMINATION_CONVERGED = 0,
  PCE_TERMINATION_MAX_ITERS = 1,
  PCE_TERMINATION_STEP_REJECTED = 2,
} PceTermination;

/*
 A Galerkin surrogate of fixed order built from a [`PceSystem`].
 */
typedef struct PceModel PceModel;

/*
 A parametric plant together with its LQR weights.
 */
typedef struct PceSystem PceSystem;

/*
 Optimization settings. Obtain defaults from [`pce_optimizer_defaults`].
 */
typedef struct PceOptimizerSettings {
  double step_size;
  double grad_tol;
  size_t max_iters;
  /*
   Non-zero selects Armijo backtracking instead of a fixed step.
   */
  int32_t armijo;
} PceOptimizerSettings;

/*
 Summary of an optimization run.
 */
typedef struct PceOptimizeResult {
  double cost;
  double grad_norm;
  size_t iterations;
  enum PceTermination termination;
} PceOptimizeResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *pce_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *pce_version(void);

/*
 Creates a compiled-in plant (`"illustrative"`, `"mass-spring"` or
 `"scalar"`) with identity weights.

 # Safety
 `name` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PceStatus pce_system_preset(const char *name, struct PceSystem **out);

/*
 Creates a plant and weights from a TOML run configuration.

 # Safety
 `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PceStatus pce_system_from_toml(const char *toml, struct PceSystem **out);

/*
 Replaces the weights; null selects the identity.

 # Safety
 `sys` must be a live handle; `q` and `r` null or `nx*nx` / `nu*nu` doubles.
 */
enum PceStatus pce_system_set_weights(struct PceSystem *sys, const double *q, const double *r);

/*
 Writes the state and input dimensions.

 # Safety
 `sys` must be a live handle; `nx` and `nu` writable.
 */
enum PceStatus pce_system_dims(const struct PceSystem *sys, size_t *nx, size_t *nu);

/*
 # Safety
 `sys` must be null or a handle from this library not yet freed.
 */
void pce_system_free(struct PceSystem *sys);

/*
 Nominal LQR gain at the interval midpoint, checked against the order
 `order` surrogate. Writes `nu * nx` doubles to `k_out`.

 # Safety
 `sys` must be a live handle; `k_out` must hold `nu * nx` doubles.
 */
enum PceStatus pce_initial_gain(const struct PceSystem *sys, size_t order, double *k_out);

/*
 Expected cost of `k` on the true plant by Gauss–Legendre quadrature
 with `grid_order` nodes.

 # Safety
 `sys` must be a live handle, `k` hold `nu * nx` doubles, `cost` writable.
 */
enum PceStatus pce_true_cost(const struct PceSystem *sys,
                             const double *k,
                             size_t grid_order,
                             double *cost);

/*
 Builds the surrogate of expansion order `order`.

 # Safety
 `sys` must be a live handle and `out` writable.
 */
enum PceStatus pce_model_new(const struct PceSystem *sys, size_t order, struct PceModel **out);

/*
 Size of the lifted state, `(order + 1) * nx`.

 # Safety
 `model` must be null or a live handle.
 */
size_t pce_model_lifted_dim(const struct PceModel *model);

/*
 # Safety
 `model` must be null or a handle from this library not yet freed.
 */
void pce_model_free(struct PceModel *model);

/*
 Surrogate cost at `k` and, when `grad_out` is non-null, its gradient.

 # Safety
 `model` must be a live handle, `k` hold `nu * nx` doubles, `cost`
 writable, and `grad_out` null or room for `nu * nx` doubles.
 */
enum PceStatus pce_evaluate(const struct PceModel *model,
                            const double *k,
                            double *cost,
                            double *grad_out);

/*
 Default settings: step 0.01, gradient tolerance 1e-3, 100000 iterations,
 fixed step.
 */
struct PceOptimizerSettings pce_optimizer_defaults(void);

/*
 Gradient descent from `k0`; writes the final gain to `k_out`.

 # Safety
 `model` must be a live handle, `settings` and `result` valid pointers,
 `k0` and `k_out` each `nu * nx` doubles (they may alias).
 */
enum PceStatus pce_optimize(const struct PceModel *model,
                            const double *k0,
                            const struct PceOptimizerSettings *settings,
                            double *k_out,
                            struct PceOptimizeResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCE_LQR_H */
