#ifndef ZSPOSE_H
#define ZSPOSE_H

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ZSPOSE_OK 0

#define ZSPOSE_ERR_NULL_POINTER -1

#define ZSPOSE_ERR_INVALID_UTF8 -2

#define ZSPOSE_ERR_PANIC -3

#define ZSPOSE_ERR_INVALID_ARGUMENT -4

/**
 * Opaque pipeline configuration.
 */
typedef struct ZsposeConfig ZsposeConfig;

/**
 * Opaque triangle mesh.
 */
typedef struct ZsposeMesh ZsposeMesh;

/**
 * Image point (pixels) and the model point (mm) seen there.
 */
typedef struct {
  double u;
  double v;
  double x;
  double y;
  double z;
} ZsposeCorrespondence;

typedef struct {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} ZsposeIntrinsics;

/**
 * Rigid transform, model to camera. `rotation` is row-major; `translation` in mm.
 */
typedef struct {
  double rotation[9];
  double translation[3];
} ZsposePose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message, excluding the terminator; 0 when none.
 */
size_t zspose_last_error_length(void);

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to
 * `len - 1` bytes). Returns the number of bytes written without the terminator.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
size_t zspose_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *zspose_version(void);

/**
 * Default configuration. Never null.
 */
ZsposeConfig *zspose_config_new(void);

/**
 * Reads a `key = value` configuration file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
int32_t zspose_config_load(const char *path, ZsposeConfig **out);

/**
 * Sets one configuration key. The configuration is left unchanged when the
 * assignment or the resulting configuration is invalid.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be NUL-terminated.
 */
int32_t zspose_config_set(ZsposeConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must come from this library (or be null) and not be used afterwards.
 */
void zspose_config_free(ZsposeConfig *cfg);

/**
 * Parses an ascii or binary little-endian PLY file into `*out`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
int32_t zspose_mesh_load(const char *path, ZsposeMesh **out);

/**
 * # Safety
 * `mesh` must come from this library; `diameter` must be writable.
 */
int32_t zspose_mesh_diameter(const ZsposeMesh *mesh, double *diameter);

/**
 * # Safety
 * `mesh` must come from this library (or be null) and not be used afterwards.
 */
void zspose_mesh_free(ZsposeMesh *mesh);

/**
 * Closed-form EPnP on at least 6 correspondences.
 *
 * # Safety
 * `corr` must point to `n` elements; `k` readable; `out` writable.
 */
int32_t zspose_epnp(const ZsposeCorrespondence *corr,
                    size_t n,
                    const ZsposeIntrinsics *k,
                    ZsposePose *out);

/**
 * RANSAC around EPnP. `inliers` (optional) receives the consensus size.
 *
 * # Safety
 * `corr` must point to `n` elements; `k` readable; `out` writable; `inliers` writable or null.
 */
int32_t zspose_ransac_pnp(const ZsposeCorrespondence *corr,
                          size_t n,
                          const ZsposeIntrinsics *k,
                          double threshold_px,
                          size_t max_iters,
                          uint64_t seed,
                          ZsposePose *out,
                          size_t *inliers);

/**
 * MSSD (mm) over all mesh vertices, no symmetries.
 *
 * # Safety
 * Pointers must be valid; `out` writable.
 */
int32_t zspose_e_mssd(const ZsposeMesh *mesh,
                      const ZsposePose *est,
                      const ZsposePose *gt,
                      double *out);

/**
 * MSPD (pixels) over all mesh vertices, no symmetries.
 *
 * # Safety
 * Pointers must be valid; `out` writable.
 */
int32_t zspose_e_mspd(const ZsposeMesh *mesh,
                      const ZsposePose *est,
                      const ZsposePose *gt,
                      const ZsposeIntrinsics *k,
                      double *out);

/**
 * Runs the synthetic end-to-end check. `passed` receives 1 or 0 and
 * `successes` (optional) the number of recovered query poses.
 *
 * # Safety
 * `passed` writable; `successes` writable or null.
 */
int32_t zspose_selftest(uint64_t seed, int32_t *passed, size_t *successes);

/**
 * Pose estimation over a detections file, writing a BOP results CSV.
 * `posed` (optional) receives the number of rows written.
 *
 * # Safety
 * `cfg` must come from this library; paths must be NUL-terminated; `posed` writable or null.
 */
int32_t zspose_pose_batch(const ZsposeConfig *cfg,
                          const char *detections,
                          const char *templates,
                          const char *features,
                          const char *models,
                          const char *out_csv,
                          size_t *posed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZSPOSE_H */
