#ifndef OMNIDEBLUR_H
#define OMNIDEBLUR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Maximum number of Gabor orientations in [`OdConfig`].
 */
#define OD_MAX_THETAS 16

typedef enum {
  OD_STATUS_OK = 0,
  OD_STATUS_NULL_ARGUMENT = 1,
  OD_STATUS_INVALID_CONFIG = 2,
  OD_STATUS_IO = 3,
  OD_STATUS_FORMAT = 4,
  OD_STATUS_DIMENSION = 5,
  OD_STATUS_NUMERIC = 6,
  OD_STATUS_DEGENERATE = 7,
  OD_STATUS_PANIC = 8,
} OdStatus;

typedef enum {
  OD_NONBLIND_TIKHONOV = 0,
  OD_NONBLIND_SPARSE = 1,
} OdNonblind;

/**
 * Opaque grayscale image with values nominally in `[0, 1]`.
 */
typedef struct OdImage OdImage;

/**
 * Opaque square blur kernel on the simplex.
 */
typedef struct OdKernel OdKernel;

/**
 * Every tunable of one deblurring run.
 */
typedef struct {
  double alpha;
  double zeta;
  double step_t;
  uint32_t fista_iters;
  uint32_t irls_outer;
  uint32_t cg_inner;
  uint32_t em_iters;
  double scale_ratio;
  uint32_t n_thetas;
  /**
   * Orientations in degrees; only the first `n_thetas` are read.
   */
  double thetas[OD_MAX_THETAS];
  double gabor_lambda;
  double gabor_sigma;
  double gabor_psi;
  double gabor_gamma;
  uint32_t gabor_support;
  bool normalize;
  bool recenter;
  OdNonblind nonblind;
  double nb_reg;
  uint32_t nb_iters;
  /**
   * Largest kernel side (odd).
   */
  uint32_t kernel_size;
  uint32_t min_kernel;
  uint64_t seed;
} OdConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fills `out` with the default parameters (kernel size 15, seed 0).
 *
 * # Safety
 * `out` must be null or point to writable memory for one `OdConfig`.
 */
OdStatus od_config_default(OdConfig *out);

/**
 * Fills `out` with the tuned preset (normalized stacks, sparse non-blind pass).
 *
 * # Safety
 * `out` must be null or point to writable memory for one `OdConfig`.
 */
OdStatus od_config_tuned(OdConfig *out);

/**
 * Creates an image from `width * height` row-major samples.
 *
 * # Safety
 * `data` must point to `width * height` readable doubles; `out` must be writable.
 */
OdStatus od_image_new(size_t width, size_t height, const double *data, OdImage **out);

/**
 * Loads a PGM or PNG file as luminance.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
OdStatus od_image_load(const char *path, OdImage **out);

/**
 * Writes an 8-bit PGM or PNG, chosen by extension.
 *
 * # Safety
 * `image` must be a live handle; `path` a NUL-terminated string.
 */
OdStatus od_image_save(const OdImage *image, const char *path);

/**
 * Releases an image. Null is ignored.
 *
 * # Safety
 * `image` must be null or a handle not yet freed.
 */
void od_image_free(OdImage *image);

/**
 * Width in pixels, or 0 for a null handle.
 *
 * # Safety
 * `image` must be null or a live handle.
 */
size_t od_image_width(const OdImage *image);

/**
 * Height in pixels, or 0 for a null handle.
 *
 * # Safety
 * `image` must be null or a live handle.
 */
size_t od_image_height(const OdImage *image);

/**
 * Borrowed pointer to the row-major samples, valid while the handle lives.
 *
 * # Safety
 * `image` must be null or a live handle.
 */
const double *od_image_data(const OdImage *image);

/**
 * Creates a kernel from `side * side` non-negative weights summing to 1.
 *
 * # Safety
 * `weights` must point to `side * side` readable doubles; `out` must be writable.
 */
OdStatus od_kernel_new(size_t side, const double *weights, OdKernel **out);

/**
 * Loads a kernel text file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
OdStatus od_kernel_load(const char *path, OdKernel **out);

/**
 * Writes a kernel text file.
 *
 * # Safety
 * `kernel` must be a live handle; `path` a NUL-terminated string.
 */
OdStatus od_kernel_save(const OdKernel *kernel, const char *path);

/**
 * Releases a kernel. Null is ignored.
 *
 * # Safety
 * `kernel` must be null or a handle not yet freed.
 */
void od_kernel_free(OdKernel *kernel);

/**
 * Kernel side, or 0 for a null handle.
 *
 * # Safety
 * `kernel` must be null or a live handle.
 */
size_t od_kernel_side(const OdKernel *kernel);

/**
 * Borrowed pointer to the row-major weights, valid while the handle lives.
 *
 * # Safety
 * `kernel` must be null or a live handle.
 */
const double *od_kernel_weights(const OdKernel *kernel);

/**
 * Blind kernel estimation only.
 *
 * # Safety
 * `image` and `config` must be live; `out_kernel` must be writable.
 */
OdStatus od_estimate_kernel(const OdImage *image, const OdConfig *config, OdKernel **out_kernel);

/**
 * Non-blind restoration with a known kernel, using the config's non-blind fields.
 *
 * # Safety
 * `image`, `kernel` and `config` must be live; `out_image` must be writable.
 */
OdStatus od_deconvolve(const OdImage *image,
                       const OdKernel *kernel,
                       const OdConfig *config,
                       OdImage **out_image);

/**
 * Full pipeline: kernel estimation then non-blind restoration. On success
 * both outputs are new handles owned by the caller.
 *
 * # Safety
 * `image` and `config` must be live; both output pointers must be writable.
 */
OdStatus od_deblur(const OdImage *image,
                   const OdConfig *config,
                   OdImage **out_image,
                   OdKernel **out_kernel);

/**
 * PSNR in dB with peak `max_value`; identical images give `+inf`.
 *
 * # Safety
 * Both images must be live; `out_db` must be writable.
 */
OdStatus od_psnr(const OdImage *a, const OdImage *b, double max_value, double *out_db);

/**
 * Haar defocus score `Q_B` and the diagonal-band spread `σ_D`. Either
 * output pointer may be null.
 *
 * # Safety
 * `image` must be live; non-null outputs must be writable.
 */
OdStatus od_defocus_score(const OdImage *image, double *out_score, double *out_sigma);

/**
 * Message for the last failed call on this thread, or null if it succeeded.
 * The string stays valid until the next call on the same thread.
 */
const char *od_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *od_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OMNIDEBLUR_H */
