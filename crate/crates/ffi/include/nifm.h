#ifndef NIFM_H
#define NIFM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum NifmStatus {
  NIFM_STATUS_OK = 0,
  NIFM_STATUS_NULL_POINTER = 1,
  NIFM_STATUS_INVALID_ARGUMENT = 2,
  NIFM_STATUS_IO = 3,
  NIFM_STATUS_FORMAT = 4,
  NIFM_STATUS_DIMENSION_MISMATCH = 5,
  NIFM_STATUS_NON_FINITE = 6,
  NIFM_STATUS_PANIC = 7,
} NifmStatus;

/**
 * A vector field, analytic or gridded.
 */
typedef struct NifmField NifmField;

/**
 * A trained flow-map model.
 */
typedef struct NifmModel NifmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library; static, never freed.
 */
const char *nifm_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * always NUL-terminated when `len > 0`). Returns the full message length
 * without the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t nifm_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NifmStatus nifm_model_load(const char *path, struct NifmModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`nifm_model_load`] not yet freed.
 */
void nifm_model_free(struct NifmModel *model);

/**
 * Spatial dimension of the model (2 or 3), or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t nifm_model_dim(const struct NifmModel *model);

/**
 * Number of trainable parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t nifm_model_param_count(const struct NifmModel *model);

/**
 * Flow-map endpoints of `n` queries, composed according to `policy`
 * (0 sqrt, 1 full, 2 log, 3 single).
 *
 * # Safety
 * `x` and `out` hold `n * dim` values; `t` and `tau` hold `n`.
 */
enum NifmStatus nifm_model_flow_map(const struct NifmModel *model,
                                    uint32_t policy,
                                    const double *x,
                                    const double *t,
                                    const double *tau,
                                    size_t n,
                                    double *out);

/**
 * Instantaneous velocity predicted by the model at `n` points.
 *
 * # Safety
 * `x` and `out` hold `n * dim` values; `t` holds `n`.
 */
enum NifmStatus nifm_model_velocity(const struct NifmModel *model,
                                    const double *x,
                                    const double *t,
                                    size_t n,
                                    double *out);

/**
 * FTLE of a 2D model over its domain on an `nx * ny` node grid (x fastest).
 *
 * # Safety
 * `out` must hold `nx * ny` values.
 */
enum NifmStatus nifm_model_ftle(const struct NifmModel *model,
                                uint32_t policy,
                                double t0,
                                double tau,
                                size_t nx,
                                size_t ny,
                                double *out);

/**
 * Loads a gridded field file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NifmStatus nifm_field_load(const char *path, struct NifmField **out);

/**
 * The analytic double gyre on `[0,2]x[0,1]`, `t` in `[0,10]`, with
 * `time_nodes` nodes defining its temporal grid unit.
 *
 * # Safety
 * `out` must be writable.
 */
enum NifmStatus nifm_field_double_gyre(size_t time_nodes, struct NifmField **out);

/**
 * # Safety
 * `field` must be null or a handle not yet freed.
 */
void nifm_field_free(struct NifmField *field);

/**
 * # Safety
 * `field` must be null or a live handle.
 */
size_t nifm_field_dim(const struct NifmField *field);

/**
 * Velocity at `n` points; gridded fields clamp to their domain.
 *
 * # Safety
 * `x` and `out` hold `n * dim` values; `t` holds `n`.
 */
enum NifmStatus nifm_field_sample(const struct NifmField *field,
                                  const double *x,
                                  const double *t,
                                  size_t n,
                                  double *out);

/**
 * Reference RK4 endpoints with step `h` (`h <= 0` selects half a temporal
 * grid unit).
 *
 * # Safety
 * `x` and `out` hold `n * dim` values; `t` and `tau` hold `n`.
 */
enum NifmStatus nifm_field_integrate(const struct NifmField *field,
                                     double h,
                                     const double *x,
                                     const double *t,
                                     const double *tau,
                                     size_t n,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NIFM_H */
