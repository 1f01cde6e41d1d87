#ifndef CLOUDJUDGE_H
#define CLOUDJUDGE_H

/* Generated by cbindgen from cloudjudge-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. Nonzero values mirror the CLI exit-code families:
 * validation/input 2, numerical/solver 3, i/o 4.
 */
typedef enum CjStatus {
  CJ_OK = 0,
  CJ_INVALID_ARGUMENT = 1,
  CJ_VALIDATION_ERROR = 2,
  CJ_NUMERICAL_ERROR = 3,
  CJ_IO_ERROR = 4,
  CJ_PANIC = 5,
} CjStatus;

/**
 * An opaque, immutable sample of particle clouds.
 */
typedef struct CjSample CjSample;

/**
 * Evaluation constants for [`cj_evaluate_json`]; obtain defaults from
 * [`cj_eval_options_default`].
 */
typedef struct CjEvalOptions {
  uint64_t seed;
  uintptr_t w1_batch_size;
  uintptr_t w1_n_batches;
  uintptr_t cov_subsample;
  uintptr_t cov_n_batches;
  double emd_radius;
  double efp_beta;
  uintptr_t frechet_samples;
  /**
   * Nonzero enables the Fréchet score (surrogate activations).
   */
  uint8_t enable_frechet;
} CjEvalOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *cj_last_error_message(void);

/**
 * Read a binary cloud file into a new sample handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid
 * pointer to receive the handle.
 */
enum CjStatus cj_sample_read(const char *path, struct CjSample **out);

/**
 * Write a sample back to the binary cloud format.
 *
 * # Safety
 * `sample` must be a live handle from this library; `path` a valid
 * NUL-terminated string.
 */
enum CjStatus cj_sample_write(const struct CjSample *sample, const char *path);

/**
 * Release a sample handle. Null is a no-op.
 *
 * # Safety
 * `sample` must be a handle returned by this library, not yet freed.
 */
void cj_sample_free(struct CjSample *sample);

/**
 * Number of clouds in a sample; zero for a null handle.
 *
 * # Safety
 * `sample` must be a live handle or null.
 */
uintptr_t cj_sample_len(const struct CjSample *sample);

/**
 * Slot capacity of the clouds in a sample; zero for a null handle.
 *
 * # Safety
 * `sample` must be a live handle or null.
 */
uintptr_t cj_sample_capacity(const struct CjSample *sample);

/**
 * Generate a seeded toy sample.
 *
 * # Safety
 * `out` must be a valid pointer to receive the handle.
 */
enum CjStatus cj_toygen(uintptr_t n_jets,
                        uintptr_t max_particles,
                        double split_prob,
                        double angle_scale,
                        uintptr_t prongs,
                        uint64_t seed,
                        struct CjSample **out);

/**
 * Energy mover's distance between cloud `index_a` of one sample and
 * cloud `index_b` of another.
 *
 * # Safety
 * Handles must be live; `out_distance` must be a valid pointer.
 */
enum CjStatus cj_emd(const struct CjSample *a,
                     uintptr_t index_a,
                     const struct CjSample *b,
                     uintptr_t index_b,
                     double radius,
                     double *out_distance);

/**
 * Fill `options` with the library defaults.
 *
 * # Safety
 * `options` must be a valid pointer.
 */
enum CjStatus cj_eval_options_default(struct CjEvalOptions *options);

/**
 * Run the full metric suite and return the JSON report (including the
 * timing block) as a caller-owned string.
 *
 * # Safety
 * Handles must be live, `options` and `out_json` valid pointers.
 */
enum CjStatus cj_evaluate_json(const struct CjSample *real,
                               const struct CjSample *gen,
                               const struct CjEvalOptions *options,
                               char **out_json);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must originate from this library and not have been freed.
 */
void cj_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLOUDJUDGE_H */
