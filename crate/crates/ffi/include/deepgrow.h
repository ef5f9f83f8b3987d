#ifndef DEEPGROW_H
#define DEEPGROW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  DG_STATUS_OK = 0,
  DG_STATUS_NULL_POINTER = 1,
  DG_STATUS_INVALID_ARGUMENT = 2,
  DG_STATUS_CONFIG = 3,
  DG_STATUS_IO = 4,
  DG_STATUS_CHECKPOINT = 5,
  DG_STATUS_EXPANSION = 6,
  DG_STATUS_MODEL = 7,
  DG_STATUS_THEORY = 8,
  DG_STATUS_RUNTIME = 9,
  DG_STATUS_PANIC = 10,
} DgStatus;

typedef enum {
  DG_SCHEDULE_WSD = 0,
  DG_SCHEDULE_COSINE = 1,
  DG_SCHEDULE_CONSTANT = 2,
} DgSchedule;

typedef enum {
  DG_PRECISION_F32 = 32,
  DG_PRECISION_F64 = 64,
} DgPrecision;

/**
 * Opaque model handle.
 */
typedef struct DgModel DgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after a success).
 * The pointer stays valid until the next call on this thread.
 */
const char *dg_last_error(void);

/**
 * Builds a freshly initialized model from a JSON model config; `precision`
 * is a `DgPrecision` value.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
DgStatus dg_model_new(const char *config_json, uint32_t precision, DgModel **out);

/**
 * Loads a checkpoint archive at its stored precision.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
DgStatus dg_model_load(const char *path, DgModel **out);

/**
 * Writes the model (and optimizer state, if any) to a checkpoint archive.
 *
 * # Safety
 * `model` must come from this library and `path` be NUL-terminated.
 */
DgStatus dg_model_save(const DgModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dg_model_free(DgModel *model);

/**
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
DgStatus dg_model_param_count(const DgModel *model, uint64_t *out);

/**
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
DgStatus dg_model_depth(const DgModel *model, size_t *out);

/**
 * Grows a model to `target_depth` blocks. `method` is one of `random`,
 * `copying_last`, `copying_stack`, `copying_inter`, `zero`,
 * `copying_zero_norm`, `copying_zero_last_linear`. New blocks go next to the
 * readout. The source handle is left untouched.
 *
 * # Safety
 * `model` must come from this library, `method` be NUL-terminated and `out` valid.
 */
DgStatus dg_model_expand(const DgModel *model,
                         size_t target_depth,
                         const char *method,
                         uint64_t seed,
                         DgModel **out);

/**
 * Mean next-token cross-entropy of a transformer on `batch` sequences of
 * `seq` tokens (row-major `inputs`/`targets` of length `batch * seq`).
 *
 * # Safety
 * `inputs` and `targets` must point to `batch * seq` values; `out` must be valid.
 */
DgStatus dg_model_loss_tokens(const DgModel *model,
                              const size_t *inputs,
                              const size_t *targets,
                              size_t batch,
                              size_t seq,
                              double *out);

/**
 * Mean-squared error of a residual MLP on `rows` examples (row-major `x` of
 * `rows * input_dim`, `y` of `rows * output_dim`).
 *
 * # Safety
 * Buffers must hold the stated number of values; `out` must be valid.
 */
DgStatus dg_model_loss_regression(const DgModel *model,
                                  const double *x,
                                  const double *y,
                                  size_t rows,
                                  double *out);

/**
 * Learning rate at integer step `step < horizon`; `kind` is a `DgSchedule` value.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
DgStatus dg_schedule_lr(uint32_t kind,
                        double peak_lr,
                        double warmup_frac,
                        double decay_frac,
                        uint64_t horizon,
                        uint64_t step,
                        double *out);

/**
 * Fraction of the total learning-rate sum spent before step `tau`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
DgStatus dg_schedule_mass(uint32_t kind,
                          double peak_lr,
                          double warmup_frac,
                          double decay_frac,
                          uint64_t horizon,
                          uint64_t tau,
                          double *out);

/**
 * `6 B (tau N_small + (T - tau) N_large)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
DgStatus dg_staged_flops(uint64_t batch,
                         uint64_t horizon,
                         uint64_t tau,
                         uint64_t n_small,
                         uint64_t n_large,
                         uint64_t *out);

/**
 * Runs one planted convex trial from a JSON trial config and writes the full
 * JSON report into `report` (up to `capacity` bytes including the NUL). The
 * required size is written to `needed` either way.
 *
 * # Safety
 * `trial_json` must be NUL-terminated; `report` may be null when `capacity`
 * is 0; `bounds_hold` and `needed` must be valid.
 */
DgStatus dg_theory_trial(const char *trial_json,
                         uint64_t seed,
                         double tolerance,
                         bool *bounds_hold,
                         char *report,
                         size_t capacity,
                         size_t *needed);

/**
 * Trains from a TOML experiment config, writing logs and checkpoints into
 * `out_dir` (null for no files), and reports the final validation loss.
 *
 * # Safety
 * `config_toml` must be NUL-terminated, `out_dir` null or NUL-terminated,
 * and `final_val_loss` valid.
 */
DgStatus dg_train(const char *config_toml, const char *out_dir, double *final_val_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPGROW_H */
