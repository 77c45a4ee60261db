#ifndef STREAMNAV_H
#define STREAMNAV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SnavStatus {
  SNAV_STATUS_OK = 0,
  SNAV_STATUS_NULL_POINTER = 1,
  SNAV_STATUS_INVALID_ARGUMENT = 2,
  SNAV_STATUS_INVALID_CONFIG = 3,
  SNAV_STATUS_SHAPE_MISMATCH = 4,
  SNAV_STATUS_NON_FINITE = 5,
  SNAV_STATUS_EMPTY_MEMORY = 6,
  SNAV_STATUS_BUFFER_TOO_SMALL = 7,
  SNAV_STATUS_DEGENERATE_EPISODE = 8,
  SNAV_STATUS_PANIC = 9,
} SnavStatus;

/**
 * Opaque streaming memory handle.
 */
typedef struct SnavMemory SnavMemory;

/**
 * Plain-data mirror of the merge configuration.
 */
typedef struct SnavMergeConfig {
  size_t alpha_curr;
  size_t alpha_short;
  size_t alpha_long;
  size_t buffer_len;
  double tau;
} SnavMergeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *snav_last_error(void);

struct SnavMergeConfig snav_merge_config_default(void);

/**
 * Creates a memory for frames of `n_x` tokens by `channels` values.
 * `cfg` may be null for the defaults. Free with [`snav_memory_free`].
 *
 * # Safety
 * `cfg` must be null or point to a valid config; `out` must be writable.
 */
enum SnavStatus snav_memory_new(const struct SnavMergeConfig *cfg,
                                size_t n_x,
                                size_t channels,
                                struct SnavMemory **out);

/**
 * # Safety
 * `mem` must be null or a handle from [`snav_memory_new`] not yet freed.
 */
void snav_memory_free(struct SnavMemory *mem);

/**
 * Pushes one frame of `len = n_x * channels` values.
 *
 * # Safety
 * `mem` must be a live handle and `data` must hold `len` readable doubles.
 */
enum SnavStatus snav_memory_push(struct SnavMemory *mem, const double *data, size_t len);

/**
 * # Safety
 * `mem` must be a live handle; `out` must be writable.
 */
enum SnavStatus snav_memory_token_count(const struct SnavMemory *mem, size_t *out);

/**
 * Number of long-term entries.
 *
 * # Safety
 * `mem` must be a live handle; `out` must be writable.
 */
enum SnavStatus snav_memory_long_len(const struct SnavMemory *mem, size_t *out);

/**
 * Frames pushed so far.
 *
 * # Safety
 * `mem` must be a live handle; `out` must be writable.
 */
enum SnavStatus snav_memory_frames(const struct SnavMemory *mem, uint64_t *out);

/**
 * Copies the token sequence (long, short, current; row-major) into `out`.
 * `written` receives the required value count even when the buffer is too small.
 *
 * # Safety
 * `mem` must be a live handle; `out` must hold `capacity` writable doubles;
 * `written` must be writable.
 */
enum SnavStatus snav_memory_copy_tokens(const struct SnavMemory *mem,
                                        double *out,
                                        size_t capacity,
                                        size_t *written);

/**
 * Average-pools a square token grid of `rows` tokens over `alpha x alpha` blocks.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles; `out` must hold `capacity`
 * writable doubles; `out_rows` must be writable.
 */
enum SnavStatus snav_grid_pool(const double *data,
                               size_t rows,
                               size_t cols,
                               size_t alpha,
                               double *out,
                               size_t capacity,
                               size_t *out_rows);

/**
 * # Safety
 * `a` and `b` must each hold `len` doubles; `out` must be writable.
 */
enum SnavStatus snav_cosine(const double *a, const double *b, size_t len, double *out);

/**
 * Success weighted by path length.
 *
 * # Safety
 * `out` must be writable.
 */
enum SnavStatus snav_spl(bool success, double path_length, double geodesic, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* STREAMNAV_H */
