#ifndef COPULA_FUSION_H
#define COPULA_FUSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_DOMAIN = 2,
  CF_STATUS_CAPABILITY = 3,
  CF_STATUS_USAGE = 4,
  CF_STATUS_FORMAT = 5,
  CF_STATUS_DATA = 6,
  CF_STATUS_ESTIMATION = 7,
  CF_STATUS_SELECTION = 8,
  CF_STATUS_CONFIG = 9,
  CF_STATUS_IO = 10,
  CF_STATUS_JSON = 11,
  CF_STATUS_INVALID_UTF8 = 12,
  CF_STATUS_PANIC = 99,
} CfStatus;

// Copula families, in the library's order.
typedef enum CfFamily {
  CF_FAMILY_INDEPENDENCE = 0,
  CF_FAMILY_GAUSSIAN = 1,
  CF_FAMILY_STUDENT_T = 2,
  CF_FAMILY_CLAYTON = 3,
  CF_FAMILY_FRANK = 4,
  CF_FAMILY_GUMBEL = 5,
} CfFamily;

// Opaque copula evaluator.
typedef struct CfCopula CfCopula;

// Opaque fitted class model set.
typedef struct CfModel CfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *cf_last_error_message(void);

// Library version as a static nul-terminated string.
const char *cf_version(void);

// Create a copula. `family` is a `CfFamily` value. `theta` is read by
// Archimedean families, `nu` by Student-t, and `sigma` (row-major
// `dim × dim`) by the elliptical families; unused arguments are ignored
// and `sigma` may then be null.
//
// # Safety
// `sigma` must point to `dim * dim` doubles when read; `out` must be
// writable.
enum CfStatus cf_copula_new(uint32_t family,
                            uintptr_t dim,
                            double theta,
                            double nu,
                            const double *sigma,
                            struct CfCopula **out_copula);

// Create a copula from its JSON form, e.g.
// `{"family": "clayton", "dim": 2, "theta": 2.0}`.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum CfStatus cf_copula_from_json(const char *json, struct CfCopula **out_copula);

// # Safety
// `copula` must come from a `cf_copula_*` constructor or be null.
void cf_copula_free(struct CfCopula *copula);

// # Safety
// `copula` must be a live handle.
uintptr_t cf_copula_dim(const struct CfCopula *copula);

// # Safety
// `u` must point to `len` doubles; `out_value` must be writable.
enum CfStatus cf_copula_log_density(const struct CfCopula *copula,
                                    const double *u,
                                    uintptr_t len,
                                    double *out_value);

// # Safety
// As [`cf_copula_log_density`].
enum CfStatus cf_copula_cdf(const struct CfCopula *copula,
                            const double *u,
                            uintptr_t len,
                            double *out_value);

// Draw `n` rows into `out_rows` (row-major `n × dim`), deterministic in
// `seed`.
//
// # Safety
// `out_rows` must have room for `n * dim` doubles.
enum CfStatus cf_copula_sample(const struct CfCopula *copula,
                               uintptr_t n,
                               uint64_t seed,
                               double *out_rows);

// Load and validate a model file written by `copula-fusion fit`.
//
// # Safety
// `path` must be a nul-terminated string; `out_model` must be writable.
enum CfStatus cf_model_load(const char *path, struct CfModel **out_model);

// # Safety
// `model` must come from [`cf_model_load`] or be null.
void cf_model_free(struct CfModel *model);

// # Safety
// `model` must be a live handle.
uintptr_t cf_model_classes(const struct CfModel *model);

// # Safety
// `model` must be a live handle.
uintptr_t cf_model_classifiers(const struct CfModel *model);

// Fuse one pixel. `scores` is the row-major `L × M` matrix of classifier
// scores; `out_posteriors` (nullable) receives `M` normalized values.
//
// # Safety
// Buffers must have the sizes stated above.
enum CfStatus cf_model_fuse_pixel(const struct CfModel *model,
                                  const double *scores,
                                  uint32_t *out_label,
                                  double *out_posteriors);

// Fuse an image. `tensors` holds `L` pointers, each to an
// `height × width × M` f32 array in (y, x, class) order. Labels go to
// `out_labels` (`height × width`); `out_scores` (nullable) receives the
// normalized posteriors; `out_fallbacks` (nullable) the number of pixels
// decided by the pooling fallback.
//
// # Safety
// Buffers must have the sizes stated above.
enum CfStatus cf_model_fuse_image(const struct CfModel *model,
                                  const float *const *tensors,
                                  uintptr_t height,
                                  uintptr_t width,
                                  uint16_t *out_labels,
                                  float *out_scores,
                                  uintptr_t *out_fallbacks);

// Segmentation metrics over `n` pixels: overall accuracy (percent), mean
// class accuracy (percent) and mean IoU (fraction). Ground-truth pixels
// equal to 65535 are skipped.
//
// # Safety
// `pred` and `gt` must point to `n` labels; outputs must be writable.
enum CfStatus cf_metrics(const uint16_t *pred,
                         const uint16_t *gt,
                         uintptr_t n,
                         uintptr_t classes,
                         double *out_oa,
                         double *out_mean_ca,
                         double *out_miou);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COPULA_FUSION_H */
