#ifndef REPVIT_H
#define REPVIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RvStatus {
  RV_STATUS_OK = 0,
  /**
   * Null pointer, non-UTF-8 string or undersized output buffer.
   */
  RV_STATUS_INVALID_ARGUMENT = 1,
  RV_STATUS_CONFIG = 2,
  /**
   * Operation not valid in the model's current form.
   */
  RV_STATUS_STATE = 3,
  /**
   * File system error, malformed file or checkpoint integrity failure.
   */
  RV_STATUS_IO = 4,
  RV_STATUS_SHAPE = 5,
  RV_STATUS_DOMAIN = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  RV_STATUS_PANIC = 7,
} RvStatus;

/**
 * Opaque model handle.
 */
typedef struct RvModel RvModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a train-form model from config JSON. `seed` selects seeded uniform
 * initialization.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RvStatus rv_model_from_config_json(const char *config_json,
                                        uint64_t seed,
                                        struct RvModel **out);

/**
 * Loads a `.rvck` checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RvStatus rv_model_load(const char *path, struct RvModel **out);

/**
 * Writes the model to a `.rvck` checkpoint.
 *
 * # Safety
 * `model` must come from this library and `path` be a NUL-terminated string.
 */
enum RvStatus rv_model_save(const struct RvModel *model, const char *path);

/**
 * Converts a train-form model to fused form in place. Fusing twice is a
 * `State` error.
 *
 * # Safety
 * `model` must come from this library.
 */
enum RvStatus rv_model_fuse(struct RvModel *model);

/**
 * # Safety
 * `model` must come from this library and `out` be writable.
 */
enum RvStatus rv_model_is_fused(const struct RvModel *model, bool *out);

/**
 * # Safety
 * `model` must come from this library and `out` be writable.
 */
enum RvStatus rv_model_num_classes(const struct RvModel *model, size_t *out);

/**
 * Runs the model on an NCHW batch and writes `n * num_classes` logits.
 *
 * # Safety
 * `input` must hold `n*c*h*w` floats and `out` must have room for
 * `out_len` floats.
 */
enum RvStatus rv_model_forward(const struct RvModel *model,
                               const float *input,
                               size_t n,
                               size_t c,
                               size_t h,
                               size_t w,
                               float *out,
                               size_t out_len);

/**
 * Computes parameter and multiply-accumulate totals for a config at a
 * square input resolution.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out_params` and
 * `out_macs` must be writable.
 */
enum RvStatus rv_analyze_config_json(const char *config_json,
                                     size_t resolution,
                                     bool fused,
                                     uint64_t *out_params,
                                     uint64_t *out_macs);

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *rv_last_error_message(void);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void rv_model_free(struct RvModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPVIT_H */
