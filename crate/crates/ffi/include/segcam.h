#ifndef SEGCAM_H
#define SEGCAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SxStatus {
  SX_STATUS_OK = 0,
  SX_STATUS_NULL_POINTER = 1,
  SX_STATUS_INVALID_ARGUMENT = 2,
  SX_STATUS_SHAPE = 3,
  SX_STATUS_NON_FINITE = 4,
  SX_STATUS_IO = 5,
  SX_STATUS_FORMAT = 6,
  SX_STATUS_UNKNOWN_LAYER = 7,
  SX_STATUS_UNKNOWN_METHOD = 8,
  SX_STATUS_CLASS_OUT_OF_RANGE = 9,
  SX_STATUS_EMPTY_REGION = 10,
  SX_STATUS_DEGENERATE_BASELINE = 11,
  SX_STATUS_NO_CONVERGENCE = 12,
  SX_STATUS_NOT_A_DISTRIBUTION = 13,
  SX_STATUS_BUFFER_TOO_SMALL = 14,
  SX_STATUS_INTERNAL = 15,
} SxStatus;

// Opaque model handle.
typedef struct SxModel SxModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sx_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`). Returns the full message length
// excluding the terminator, or 0 when there is no error.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t sx_last_error_message(char *buf, size_t len);

// Human-readable name of a status code; unknown codes give "unknown status".
const char *sx_status_name(int32_t status);

// Loads a weight file written by `segcam train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a writable handle slot.
enum SxStatus sx_model_load(const char *path, struct SxModel **out);

// Builds an untrained default network (3 × height × width input, two
// classes) with seeded weights.
//
// # Safety
// `out` must be a writable handle slot.
enum SxStatus sx_model_new(size_t height, size_t width, uint64_t seed, struct SxModel **out);

// Writes the model to a weight file.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum SxStatus sx_model_save(const struct SxModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void sx_model_free(struct SxModel *model);

// Input shape and class count of the model.
//
// # Safety
// `model` must be a live handle; the out pointers writable.
enum SxStatus sx_model_shape(const struct SxModel *model,
                             size_t *channels,
                             size_t *height,
                             size_t *width,
                             size_t *num_classes);

// Elements needed for the outputs of [`sx_model_segment`] (`probs`) and
// [`sx_model_explain`] (`saliency`, also the mask length).
//
// # Safety
// `model` must be a live handle; the out pointers writable.
enum SxStatus sx_model_output_len(const struct SxModel *model, size_t *probs, size_t *saliency);

// Segments one `C × H × W` channels-first image.
//
// Writes `L × H × W` class probabilities into `probs` and, unless `mask`
// is null, the per-pixel argmax class into `mask` (`H × W`).
//
// # Safety
// Pointers must be valid for the stated lengths.
enum SxStatus sx_model_segment(const struct SxModel *model,
                               const double *image,
                               size_t image_len,
                               double *probs,
                               size_t probs_len,
                               uint8_t *mask,
                               size_t mask_len);

// Computes one saliency map (`H × W`, values in `[0, 1]`).
//
// `method` is a method id such as `seg-grad-cam`. `region` is an `H × W`
// byte mask of the explained pixels; null selects the pixels predicted as
// `class`. `layer` null selects the default layer.
//
// # Safety
// Strings must be NUL-terminated; pointers valid for the stated lengths.
enum SxStatus sx_model_explain(const struct SxModel *model,
                               const double *image,
                               size_t image_len,
                               const char *method,
                               size_t class_,
                               const uint8_t *region,
                               size_t region_len,
                               const char *layer,
                               double *saliency,
                               size_t saliency_len);

// Normalised per-pixel entropy of `L × H × W` probabilities into `out`
// (`H × W`).
//
// # Safety
// Pointers must be valid for the stated lengths.
enum SxStatus sx_pixel_entropy(const double *probs,
                               size_t num_classes,
                               size_t height,
                               size_t width,
                               double *out,
                               size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGCAM_H */
