#ifndef QTMT_FAST_H
#define QTMT_FAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define QF_MODE_ORACLE 0

#define QF_MODE_DDFF 1

#define QF_MODE_PPBE 2

#define QF_MODE_FULL 3

// Number of cells in a reference depth map.
#define QF_MAP_LEN 25

typedef enum QfStatus {
  QF_STATUS_OK = 0,
  QF_STATUS_NULL_POINTER = 1,
  QF_STATUS_INVALID_ARGUMENT = 2,
  QF_STATUS_IO = 3,
  QF_STATUS_FORMAT = 4,
  QF_STATUS_CONFIG = 5,
  QF_STATUS_INTERNAL = 6,
} QfStatus;

typedef struct QfEncoder QfEncoder;

typedef struct QfModel QfModel;

typedef struct QfReport QfReport;

typedef struct QfTotals {
  double distortion;
  double rate_bits;
  double j;
  double psnr;
  // Negative when timing was disabled.
  double time_seconds;
} QfTotals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *qf_last_error_message(void);

// Loads a weights file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum QfStatus qf_model_load(const char *path, struct QfModel **out);

// Freshly initialized (untrained) model from a seed.
//
// # Safety
// `out` must be a valid pointer.
enum QfStatus qf_model_seeded(uint64_t seed, struct QfModel **out);

// # Safety
// `model` must come from this library; `path` must be NUL-terminated.
enum QfStatus qf_model_save(const struct QfModel *model, const char *path);

// Predicted depth (1..=6) for a row-major 5×5 map of reference depths.
//
// # Safety
// `depths` must point to 25 bytes and `out` must be valid.
enum QfStatus qf_model_predict_depth(const struct QfModel *model,
                                     const uint8_t *depths,
                                     uint8_t *out);

// # Safety
// `model` must come from this library or be null.
void qf_model_free(struct QfModel *model);

// Creates an encoder for `width × height` luma frames. `mode` is one of
// the `QF_MODE_*` constants; `ctu_size` is 32, 64 or 128.
//
// # Safety
// `out` must be a valid pointer.
enum QfStatus qf_encoder_new(size_t width,
                             size_t height,
                             int32_t qp,
                             uint32_t mode,
                             size_t ctu_size,
                             struct QfEncoder **out);

// Attaches a copy of `model`; the caller keeps ownership of its handle.
//
// # Safety
// Both handles must come from this library.
enum QfStatus qf_encoder_set_model(struct QfEncoder *enc, const struct QfModel *model);

// Switches wall-clock timing in reports on (non-zero) or off.
//
// # Safety
// `enc` must come from this library.
enum QfStatus qf_encoder_set_timing(struct QfEncoder *enc, int32_t enabled);

// Appends one luma frame; rows are `stride` bytes apart.
//
// # Safety
// `samples` must hold `stride * (height - 1) + width` bytes.
enum QfStatus qf_encoder_push_frame(struct QfEncoder *enc, const uint8_t *samples, size_t stride);

// Encodes every pushed frame.
//
// # Safety
// `enc` must come from this library and `out` must be valid.
enum QfStatus qf_encoder_run(const struct QfEncoder *enc, struct QfReport **out);

// # Safety
// `enc` must come from this library or be null.
void qf_encoder_free(struct QfEncoder *enc);

// # Safety
// `report` must come from this library and `out` must be valid.
enum QfStatus qf_report_totals(const struct QfReport *report, struct QfTotals *out);

// # Safety
// `report` must come from this library and `out` must be valid.
enum QfStatus qf_report_frame_count(const struct QfReport *report, size_t *out);

// The report as JSON. Release the string with [`qf_string_free`].
//
// # Safety
// `report` must come from this library and `out` must be valid.
enum QfStatus qf_report_json(const struct QfReport *report, char **out);

// # Safety
// `report` must come from this library or be null.
void qf_report_free(struct QfReport *report);

// # Safety
// `s` must come from this library or be null.
void qf_string_free(char *s);

// Bjøntegaard delta rate of the test curve against the anchor, in percent.
//
// # Safety
// Each array must hold the stated number of values; `out` must be valid.
enum QfStatus qf_bdbr(const double *anchor_rates,
                      const double *anchor_psnrs,
                      size_t anchor_len,
                      const double *test_rates,
                      const double *test_psnrs,
                      size_t test_len,
                      double *out);

// Average time saving over `len` QPs, in percent.
//
// # Safety
// Both arrays must hold `len` values; `out` must be valid.
enum QfStatus qf_ats(const double *t_ori, const double *t_pro, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QTMT_FAST_H */
