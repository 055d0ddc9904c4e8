/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef DROPTRACK_H
#define DROPTRACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DtStatus {
  DT_STATUS_OK = 0,
  DT_STATUS_NULL_POINTER = 1,
  DT_STATUS_INVALID_ARGUMENT = 2,
  DT_STATUS_CONFIG = 3,
  DT_STATUS_TRACKER = 4,
  DT_STATUS_BUFFER_TOO_SMALL = 5,
  DT_STATUS_PANIC = 6,
} DtStatus;

/**
 * Opaque tracker handle.
 */
typedef struct DtTracker DtTracker;

/**
 * Axis-aligned box, top-left corner and size in pixels.
 */
typedef struct DtBox {
  double x;
  double y;
  double w;
  double h;
} DtBox;

typedef struct DtDetection {
  struct DtBox bbox;
  /**
   * In [0, 1].
   */
  double confidence;
} DtDetection;

/**
 * Box of a confirmed track matched in the current frame.
 */
typedef struct DtTrackBox {
  uint64_t track_id;
  struct DtBox bbox;
} DtTrackBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dt_version(void);

/**
 * Creates a tracker. `config_toml` is a run configuration document (only its
 * `[tracker]` table is used) or NULL for defaults.
 *
 * # Safety
 * `config_toml` must be NULL or a NUL-terminated string; `out` must be writable.
 */
enum DtStatus dt_tracker_new(const char *config_toml, struct DtTracker **out);

/**
 * Releases a tracker; NULL is ignored.
 *
 * # Safety
 * `tracker` must come from `dt_tracker_new` and not be used afterwards.
 */
void dt_tracker_free(struct DtTracker *tracker);

/**
 * Upper bound on the boxes the next `dt_tracker_step` with `n_detections` can emit.
 *
 * # Safety
 * `tracker` must be a live handle; `out` must be writable.
 */
enum DtStatus dt_tracker_output_capacity(const struct DtTracker *tracker,
                                         size_t n_detections,
                                         size_t *out);

/**
 * Advances the tracker by one frame. Frames must strictly increase. Only
 * confirmed tracks matched in this frame are reported.
 *
 * Writes up to `capacity` boxes to `out` and their number to `out_len`. When
 * `capacity` is below `dt_tracker_output_capacity`, returns
 * `DT_STATUS_BUFFER_TOO_SMALL` with the required size in `out_len` and leaves
 * the tracker untouched.
 *
 * # Safety
 * `detections` must hold `n_detections` elements, `out` room for `capacity`.
 */
enum DtStatus dt_tracker_step(struct DtTracker *tracker,
                              uint32_t frame,
                              const struct DtDetection *detections,
                              size_t n_detections,
                              struct DtTrackBox *out,
                              size_t capacity,
                              size_t *out_len);

/**
 * Intersection over union of two boxes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DtStatus dt_iou(const struct DtBox *a, const struct DtBox *b, double *out);

/**
 * Minimum-cost assignment of a row-major `rows x cols` cost matrix.
 *
 * Entries equal to `INFINITY` are forbidden pairs. As many rows as possible
 * are matched, and among those matchings the cheapest is returned.
 * `row_to_col[r]` receives the matched column or -1; `total_cost` may be NULL.
 *
 * # Safety
 * `costs` must hold `rows * cols` values and `row_to_col` room for `rows`.
 */
enum DtStatus dt_solve_assignment(const double *costs,
                                  size_t rows,
                                  size_t cols,
                                  int64_t *row_to_col,
                                  double *total_cost);

/**
 * Mean absolute difference between two per-frame count series of length `n`.
 *
 * # Safety
 * `measured` and `predicted` must hold `n` values.
 */
enum DtStatus dt_counting_error(const uint32_t *measured,
                                const uint32_t *predicted,
                                size_t n,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DROPTRACK_H */
