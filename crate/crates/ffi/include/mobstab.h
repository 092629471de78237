#ifndef MOBSTAB_H
#define MOBSTAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Codes from 10 upward correspond to library errors.
 */
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_UTF8 = 2,
  MS_STATUS_PANIC = 3,
  MS_STATUS_INVALID_COORDINATE = 10,
  MS_STATUS_NON_FINITE_TIME = 11,
  MS_STATUS_INVALID_FRAME = 12,
  MS_STATUS_INVALID_GRID = 13,
  MS_STATUS_TOO_FEW_FIXES = 14,
  MS_STATUS_ZERO_TERMINAL_VALUE = 15,
  MS_STATUS_EMPTY_SERIES = 16,
  MS_STATUS_EMPTY_COHORT = 17,
  MS_STATUS_MIXED_GAMMA = 18,
  MS_STATUS_EMPTY_SEQUENCE = 19,
  MS_STATUS_INVALID_SEQUENCE = 20,
  MS_STATUS_NONPOSITIVE_DENSITY = 21,
  MS_STATUS_NO_STATIONARY_PAIRS = 22,
  MS_STATUS_FRAME_TOO_SHORT = 23,
  MS_STATUS_ALL_PERIODS_EMPTY = 24,
  MS_STATUS_EMPTY_TERMINAL_LEVEL_SET = 25,
  MS_STATUS_INVALID_PARAMETER = 26,
} MsStatus;

/**
 * Activity estimator selector.
 */
typedef enum MsEstimator {
  MS_ESTIMATOR_ORDINARY = 0,
  MS_ESTIMATOR_CONSERVATIVE = 1,
} MsEstimator;

/**
 * Opaque activity distribution handle.
 */
typedef struct MsDistribution MsDistribution;

/**
 * Opaque grid handle.
 */
typedef struct MsGrid MsGrid;

/**
 * Opaque trajectory handle.
 */
typedef struct MsTrajectory MsTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *ms_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

/**
 * Builds a trajectory from `n` fixes in any order. Fixes sharing a
 * timestamp are reduced to the first; the number dropped is written to
 * `duplicates` when it is not null.
 *
 * # Safety
 * `id` must be a NUL-terminated string; `t`, `lon` and `lat` must point to
 * `n` readable doubles; `out` must be writable.
 */
enum MsStatus ms_trajectory_new(const char *id,
                                const double *t,
                                const double *lon,
                                const double *lat,
                                size_t n,
                                size_t *duplicates,
                                struct MsTrajectory **out);

/**
 * Number of fixes, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t ms_trajectory_len(const struct MsTrajectory *traj);

/**
 * # Safety
 * `traj` must be null or a handle not yet freed.
 */
void ms_trajectory_free(struct MsTrajectory *traj);

/**
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_grid_new(double origin_lon,
                          double origin_lat,
                          uint32_t n_cols,
                          uint32_t n_rows,
                          double cell_size_m,
                          struct MsGrid **out);

/**
 * Cell containing a point; fails with `InvalidCoordinate` outside the grid.
 *
 * # Safety
 * `grid` must be a live handle; `row` and `col` must be writable.
 */
enum MsStatus ms_grid_cell_of(const struct MsGrid *grid,
                              double lon,
                              double lat,
                              uint32_t *row,
                              uint32_t *col);

/**
 * # Safety
 * `grid` must be null or a handle not yet freed.
 */
void ms_grid_free(struct MsGrid *grid);

/**
 * Last crossing time, in seconds after `t_min`, of the velocity APE above
 * `gamma`.
 *
 * # Safety
 * `traj` must be a live handle; `out_seconds` must be writable.
 */
enum MsStatus ms_velocity_lct(const struct MsTrajectory *traj,
                              double t_min,
                              double t_max,
                              double gamma,
                              double *out_seconds);

/**
 * Activity distribution of a trajectory over `[t_min, t_max]`. Fixes
 * outside the frame or the grid are ignored.
 *
 * # Safety
 * `traj` and `grid` must be live handles; `out` must be writable.
 */
enum MsStatus ms_activity_estimate(const struct MsTrajectory *traj,
                                   const struct MsGrid *grid,
                                   double t_min,
                                   double t_max,
                                   enum MsEstimator estimator,
                                   struct MsDistribution **out);

/**
 * Number of cells with positive mass, or 0 for a null handle.
 *
 * # Safety
 * `dist` must be null or a live handle.
 */
size_t ms_distribution_len(const struct MsDistribution *dist);

/**
 * The `index`-th cell in row-major order and its mass.
 *
 * # Safety
 * `dist` must be a live handle; the out pointers must be writable.
 */
enum MsStatus ms_distribution_get(const struct MsDistribution *dist,
                                  size_t index,
                                  uint32_t *row,
                                  uint32_t *col,
                                  double *mass);

/**
 * L1 distance between two distributions.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum MsStatus ms_distribution_l1(const struct MsDistribution *a,
                                 const struct MsDistribution *b,
                                 double *out);

/**
 * # Safety
 * `dist` must be null or a handle not yet freed.
 */
void ms_distribution_free(struct MsDistribution *dist);

/**
 * Distribution and level-set last crossing times, in periods of
 * `period_length` seconds.
 *
 * # Safety
 * `traj` and `grid` must be live handles; the out pointers must be
 * writable.
 */
enum MsStatus ms_period_stability(const struct MsTrajectory *traj,
                                  const struct MsGrid *grid,
                                  double t_min,
                                  double t_max,
                                  double period_length,
                                  enum MsEstimator estimator,
                                  double alpha,
                                  double gamma,
                                  size_t *lct_distribution_out,
                                  size_t *lct_level_set_out);

/**
 * Number of queen-connected components among `n` cells. Cells outside the
 * grid are ignored.
 *
 * # Safety
 * `rows` and `cols` must point to `n` readable values; `grid` must be a
 * live handle; `out` must be writable.
 */
enum MsStatus ms_connected_components(const uint32_t *rows,
                                      const uint32_t *cols,
                                      size_t n,
                                      const struct MsGrid *grid,
                                      size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOBSTAB_H */
