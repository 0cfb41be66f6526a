#ifndef LOWLIGHT_H
#define LOWLIGHT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum LlStatus {
  LL_STATUS_OK = 0,
  LL_STATUS_INVALID_ARGUMENT = 1,
  LL_STATUS_INVALID_SHAPE = 2,
  LL_STATUS_UNSUPPORTED_CFA = 3,
  LL_STATUS_FORMAT = 4,
  LL_STATUS_IO = 5,
  LL_STATUS_STATE = 6,
  LL_STATUS_NULL_POINTER = 7,
  LL_STATUS_PANIC = 8,
} LlStatus;

// Linear RGB image in [0, 1].
typedef struct LlImage LlImage;

// Trained restoration network.
typedef struct LlModel LlModel;

// Mosaicked sensor frame.
typedef struct LlRaw LlRaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after success.
// The pointer stays valid until the next call on this thread.
const char *ll_last_error(void);

// Library version as a static NUL-terminated string.
const char *ll_version(void);

// Loads the network weights from a checkpoint file.
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum LlStatus ll_model_load(const char *path, struct LlModel **out);

// # Safety
// `model` is null or came from [`ll_model_load`] and was not freed.
void ll_model_free(struct LlModel *model);

// Reads an LLRW raw frame.
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum LlStatus ll_raw_load(const char *path, struct LlRaw **out);

// Writes the frame's exposure time in seconds to `seconds`.
//
// # Safety
// `raw` is a live handle; `seconds` is writable.
enum LlStatus ll_raw_exposure(const struct LlRaw *raw, double *seconds);

// # Safety
// `raw` is null or came from [`ll_raw_load`] and was not freed.
void ll_raw_free(struct LlRaw *raw);

// Restores a raw frame at the given amplification into an sRGB image.
//
// # Safety
// `model` and `raw` are live handles; `out` is writable.
enum LlStatus ll_restore(const struct LlModel *model,
                         const struct LlRaw *raw,
                         double amplification,
                         struct LlImage **out);

// Reads a PNG or PPM image.
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum LlStatus ll_image_load(const char *path, struct LlImage **out);

// Writes an image; the format follows the file extension.
//
// # Safety
// `image` is a live handle; `path` is a NUL-terminated string.
enum LlStatus ll_image_save(const struct LlImage *image, const char *path, bool sixteen_bit);

// Writes the image extents.
//
// # Safety
// `image` is a live handle; `height` and `width` are writable.
enum LlStatus ll_image_size(const struct LlImage *image, uintptr_t *height, uintptr_t *width);

// Writes the mean lightness in [0, 1].
//
// # Safety
// `image` is a live handle; `lightness` is writable.
enum LlStatus ll_image_mean_lightness(const struct LlImage *image, double *lightness);

// # Safety
// `image` is null or came from this library and was not freed.
void ll_image_free(struct LlImage *image);

// Contrast enhancement with the default dehazing parameters and the given
// haze-removal strength `omega` in [0, 1].
//
// # Safety
// `image` is a live handle; `out` is writable.
enum LlStatus ll_enhance(const struct LlImage *image, double omega, struct LlImage **out);

// Writes PSNR in dB between two images of equal size.
//
// # Safety
// `pred` and `target` are live handles; `db` is writable.
enum LlStatus ll_psnr(const struct LlImage *pred, const struct LlImage *target, double *db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOWLIGHT_H */
