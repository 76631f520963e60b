#ifndef ESHDR_H
#define ESHDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call. Values 2 to 5 match the CLI exit codes.
typedef enum EshdrStatus {
  ESHDR_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or an out-of-range index.
  ESHDR_STATUS_INVALID_ARGUMENT = 1,
  ESHDR_STATUS_CONFIG = 2,
  ESHDR_STATUS_IO = 3,
  ESHDR_STATUS_VALIDATION = 4,
  ESHDR_STATUS_NUMERIC = 5,
  // A bug inside the library; the message has the panic payload.
  ESHDR_STATUS_PANIC = 6,
} EshdrStatus;

// A time-ordered event stream.
typedef struct EshdrEvents EshdrEvents;

// A linear-light float image.
typedef struct EshdrRadiance EshdrRadiance;

typedef struct EshdrEvent {
  // Nanoseconds.
  uint64_t t;
  uint16_t x;
  uint16_t y;
  // +1 or -1.
  int8_t polarity;
} EshdrEvent;

// Headline metrics of a pipeline run. Metrics that were not computed are NaN.
typedef struct EshdrReport {
  double mu_psnr;
  double mu_ssim;
  double charbonnier;
  double baseline_mu_psnr;
  double improvement_db;
} EshdrReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call into the library on this thread.
const char *eshdr_last_error(void);

// Library version as a static NUL-terminated string.
const char *eshdr_version(void);

// Copy `width * height * channels` interleaved samples into a new image.
//
// # Safety
// `data` must point to that many readable floats; `out` must be writable.
enum EshdrStatus eshdr_radiance_new(size_t width,
                                    size_t height,
                                    size_t channels,
                                    const float *data,
                                    struct EshdrRadiance **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EshdrStatus eshdr_radiance_read_pfm(const char *path, struct EshdrRadiance **out);

// # Safety
// `image` must be a live handle and `path` a NUL-terminated string.
enum EshdrStatus eshdr_radiance_write_pfm(const struct EshdrRadiance *image, const char *path);

// Width in pixels, 0 for NULL.
//
// # Safety
// `image` must be NULL or a live handle.
size_t eshdr_radiance_width(const struct EshdrRadiance *image);

// # Safety
// `image` must be NULL or a live handle.
size_t eshdr_radiance_height(const struct EshdrRadiance *image);

// # Safety
// `image` must be NULL or a live handle.
size_t eshdr_radiance_channels(const struct EshdrRadiance *image);

// Interleaved samples, row-major from the top row. Borrowed from the handle.
//
// # Safety
// `image` must be NULL or a live handle.
const float *eshdr_radiance_data(const struct EshdrRadiance *image);

// # Safety
// `image` must be NULL or a handle not yet freed.
void eshdr_radiance_free(struct EshdrRadiance *image);

// Simulate the events between consecutive frames.
//
// # Safety
// `frames` and `timestamps` must each point to `count` readable entries, every
// frame a live handle; `out` must be writable.
enum EshdrStatus eshdr_events_simulate(const struct EshdrRadiance *const *frames,
                                       const uint64_t *timestamps,
                                       size_t count,
                                       double contrast_threshold,
                                       double log_floor,
                                       struct EshdrEvents **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EshdrStatus eshdr_events_read(const char *path, struct EshdrEvents **out);

// # Safety
// `stream` must be a live handle and `path` a NUL-terminated string.
enum EshdrStatus eshdr_events_write(const struct EshdrEvents *stream, const char *path);

// Number of events, 0 for NULL.
//
// # Safety
// `stream` must be NULL or a live handle.
size_t eshdr_events_len(const struct EshdrEvents *stream);

// # Safety
// `stream` must be a live handle; `out` must be writable.
enum EshdrStatus eshdr_events_get(const struct EshdrEvents *stream,
                                  size_t index,
                                  struct EshdrEvent *out);

// # Safety
// `stream` must be NULL or a handle not yet freed.
void eshdr_events_free(struct EshdrEvents *stream);

// PSNR in the μ-law tone-mapped domain; `+inf` for identical images.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum EshdrStatus eshdr_mu_psnr(const struct EshdrRadiance *a,
                               const struct EshdrRadiance *b,
                               double mu,
                               double *out);

// SSIM in the μ-law tone-mapped domain.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum EshdrStatus eshdr_mu_ssim(const struct EshdrRadiance *a,
                               const struct EshdrRadiance *b,
                               double mu,
                               double *out);

// Run every stage. `config_path` may be NULL for the defaults; a non-NULL
// `out_dir` overrides the configured run directory. `report` may be NULL.
//
// # Safety
// Non-NULL strings must be NUL-terminated; a non-NULL `report` must be writable.
enum EshdrStatus eshdr_pipeline_run(const char *config_path,
                                    const char *out_dir,
                                    struct EshdrReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ESHDR_H */
