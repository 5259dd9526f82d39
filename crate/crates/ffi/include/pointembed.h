#ifndef POINTEMBED_H
#define POINTEMBED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PeStatus {
  PE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PE_STATUS_NULL_ARGUMENT = 1,
  /**
   * Arguments are inconsistent (sizes, counts, out-of-range indices).
   */
  PE_STATUS_INVALID_ARGUMENT = 2,
  PE_STATUS_IO = 3,
  /**
   * Malformed point-cloud file or non-UTF-8 path.
   */
  PE_STATUS_PARSE = 4,
  /**
   * Unreadable or inconsistent checkpoint.
   */
  PE_STATUS_CHECKPOINT = 5,
  /**
   * Invalid model configuration.
   */
  PE_STATUS_CONFIG = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  PE_STATUS_INTERNAL = 7,
} PeStatus;

/**
 * A point cloud together with the padding and normalization metadata that
 * `pe_embed` attaches for `pe_restore`.
 */
typedef struct PeCloud PeCloud;

/**
 * A trained (or freshly initialized) embedder/restorer pair.
 */
typedef struct PeModel PeModel;

/**
 * Evaluation metrics between two clouds. `emd` is NaN for unequal sizes.
 */
typedef struct PeMetrics {
  double emd;
  double hd;
  double cd;
} PeMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pe_version(void);

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next library call on the same thread.
 */
const char *pe_last_error(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer slot.
 */
enum PeStatus pe_model_load(const char *path, struct PeModel **out);

/**
 * Builds a freshly initialized model from a JSON configuration. Omitted
 * fields take their defaults, so `"{}"` gives the default model.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a writable slot.
 */
enum PeStatus pe_model_init(const char *config_json, struct PeModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pe_model_free(struct PeModel *model);

/**
 * Sampling rate `r` of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pe_model_ratio(const struct PeModel *model);

/**
 * Dense point count `N` the model was built for, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pe_model_points(const struct PeModel *model);

/**
 * Copies `n` points from the row-major `xyz` buffer (`3 * n` doubles).
 *
 * # Safety
 * `xyz` must point to `3 * n` readable doubles and `out` be a writable slot.
 */
enum PeStatus pe_cloud_new(const double *xyz, size_t n, struct PeCloud **out);

/**
 * Reads an XYZ or PLY file (chosen by extension), including its metadata.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable slot.
 */
enum PeStatus pe_cloud_read(const char *path, struct PeCloud **out);

/**
 * Writes a cloud and its metadata as XYZ or PLY (chosen by extension).
 *
 * # Safety
 * `cloud` must be a live handle and `path` a NUL-terminated string.
 */
enum PeStatus pe_cloud_write(const struct PeCloud *cloud, const char *path);

/**
 * Releases a cloud. Null is ignored.
 *
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void pe_cloud_free(struct PeCloud *cloud);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t pe_cloud_len(const struct PeCloud *cloud);

/**
 * Copies the points into `out` as row-major xyz. `capacity` is the number of
 * points `out` can hold and must be at least `pe_cloud_len(cloud)`.
 *
 * # Safety
 * `out` must point to `3 * capacity` writable doubles.
 */
enum PeStatus pe_cloud_points(const struct PeCloud *cloud, double *out, size_t capacity);

/**
 * Farthest point sampling: writes `n` indices, the first being `start`.
 *
 * # Safety
 * `out_indices` must point to `n` writable `size_t` values.
 */
enum PeStatus pe_fps(const struct PeCloud *cloud, size_t n, size_t start, size_t *out_indices);

/**
 * Self-embeds a dense cloud. Inputs whose size is not a multiple of `r` are
 * padded; the result carries the padding and normalization metadata.
 *
 * # Safety
 * Handles must be live and `out` a writable slot.
 */
enum PeStatus pe_embed(const struct PeModel *model,
                       const struct PeCloud *dense,
                       struct PeCloud **out);

/**
 * Restores a dense cloud from a self-embedded one. A non-zero `patch_size`
 * (counted in dense points) restores oversized inputs patch by patch; 0
 * restores in one pass.
 *
 * # Safety
 * Handles must be live and `out` a writable slot.
 */
enum PeStatus pe_restore(const struct PeModel *model,
                         const struct PeCloud *sparse,
                         size_t patch_size,
                         struct PeCloud **out);

/**
 * EMD, Hausdorff and mean chamfer distance between two clouds.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum PeStatus pe_metrics(const struct PeCloud *a, const struct PeCloud *b, struct PeMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POINTEMBED_H */
