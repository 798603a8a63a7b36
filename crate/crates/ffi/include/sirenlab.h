#ifndef SIRENLAB_H
#define SIRENLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SIRENLAB_OK 0

#define SIRENLAB_ERR_NULL 1

#define SIRENLAB_ERR_ARGUMENT 2

#define SIRENLAB_ERR_IO 3

#define SIRENLAB_ERR_FORMAT 4

#define SIRENLAB_ERR_TRAINING 5

#define SIRENLAB_ERR_DOMAIN 6

#define SIRENLAB_ERR_PANIC 7

typedef struct SirenlabConfig SirenlabConfig;

typedef struct SirenlabImage SirenlabImage;

typedef struct SirenlabModel SirenlabModel;

typedef struct SirenlabRecord SirenlabRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static string.
const char *sirenlab_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *sirenlab_last_error(void);

// Loads a PNG or PPM file. A nonzero `size` center-crops and resizes to a
// `size` x `size` square.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
int32_t sirenlab_image_load(const char *path, size_t size, struct SirenlabImage **out);

// Synthetic dead-leaves test image.
//
// # Safety
// `out` must be writable.
int32_t sirenlab_image_synthetic(size_t size, uint64_t seed, struct SirenlabImage **out);

// Image from interleaved 8-bit RGB rows (`height * width * 3` bytes).
//
// # Safety
// `data` must point to `height * width * 3` readable bytes.
int32_t sirenlab_image_from_rgb8(const uint8_t *data,
                                 size_t height,
                                 size_t width,
                                 struct SirenlabImage **out);

// # Safety
// `img` must be a live image handle; `height` and `width` must be writable.
int32_t sirenlab_image_dims(const struct SirenlabImage *img, size_t *height, size_t *width);

// # Safety
// `img` must be NULL or a handle not yet freed.
void sirenlab_image_free(struct SirenlabImage *img);

// Training job with `omega0 = gamma * image_size` and default steps and
// learning rate.
//
// # Safety
// `out` must be writable.
int32_t sirenlab_config_new(size_t width,
                            size_t depth,
                            double gamma,
                            size_t image_size,
                            uint64_t seed,
                            struct SirenlabConfig **out);

// # Safety
// `cfg` must be a live config handle.
int32_t sirenlab_config_set_steps(struct SirenlabConfig *cfg, size_t steps);

// # Safety
// `cfg` must be a live config handle.
int32_t sirenlab_config_set_learning_rate(struct SirenlabConfig *cfg, double lr);

// Parameter count and bits per pixel of the encoding.
//
// # Safety
// `cfg` must be a live config handle; the out pointers must be writable.
int32_t sirenlab_config_size(const struct SirenlabConfig *cfg, size_t *params, double *bpp);

// # Safety
// `cfg` must be NULL or a handle not yet freed.
void sirenlab_config_free(struct SirenlabConfig *cfg);

// Trains one SIREN on `img`. A run that diverges still yields a record.
//
// # Safety
// `cfg` and `img` must be live handles; `out` must be writable.
int32_t sirenlab_train(const struct SirenlabConfig *cfg,
                       const struct SirenlabImage *img,
                       struct SirenlabRecord **out);

// Best PSNR (dB) and the step it was reached at.
//
// # Safety
// `rec` must be a live record handle; the out pointers must be writable.
int32_t sirenlab_record_best(const struct SirenlabRecord *rec, double *psnr, size_t *step);

// Number of points on the PSNR curve; 0 for a NULL handle.
//
// # Safety
// `rec` must be NULL or a live record handle.
size_t sirenlab_record_curve_len(const struct SirenlabRecord *rec);

// # Safety
// `rec` must be a live record handle; the out pointers must be writable.
int32_t sirenlab_record_curve_point(const struct SirenlabRecord *rec,
                                    size_t index,
                                    size_t *step,
                                    double *psnr);

// Best PSNR seen up to and including `step`.
//
// # Safety
// `rec` must be a live record handle; `psnr` must be writable.
int32_t sirenlab_record_psnr_until(const struct SirenlabRecord *rec, size_t step, double *psnr);

// # Safety
// `rec` must be NULL or a handle not yet freed.
void sirenlab_record_free(struct SirenlabRecord *rec);

// PSNR of the DCT codec at compression `ratio` (24 bits per pixel / bpp).
//
// # Safety
// `img` must be a live image handle; `psnr` must be writable.
int32_t sirenlab_codec_psnr(const struct SirenlabImage *img, double ratio, double *psnr);

// Loads a model file written by one of the `fit-*` commands.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
int32_t sirenlab_model_load(const char *path, struct SirenlabModel **out);

// Kind of the model ("extrapolate", "proxy", "gp" or "mlp"), a static
// string; NULL for a NULL handle.
//
// # Safety
// `model` must be NULL or a live model handle.
const char *sirenlab_model_kind(const struct SirenlabModel *model);

// Predicted PSNR for a job. `cfg` and `img` may be NULL when the model does
// not need them; `early_psnr` is NaN unless the model extrapolates from an
// early step.
//
// # Safety
// `model` must be a live handle, `cfg` and `img` live or NULL, and `psnr`
// writable.
int32_t sirenlab_model_predict(const struct SirenlabModel *model,
                               const struct SirenlabConfig *cfg,
                               const struct SirenlabImage *img,
                               double early_psnr,
                               double *psnr);

// # Safety
// `model` must be NULL or a handle not yet freed.
void sirenlab_model_free(struct SirenlabModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIRENLAB_H */
