#ifndef SONAR_GESTURE_H
#define SONAR_GESTURE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define SG_IMAGE_SIZE 100

#define SG_IMAGE_PIXELS 10000

#define SG_CLASS_COUNT 6

typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_INVALID_ARGUMENT = 1,
  SG_STATUS_NULL_POINTER = 2,
  SG_STATUS_IO = 3,
  SG_STATUS_FORMAT = 4,
  SG_STATUS_DATA = 5,
  SG_STATUS_NUMERIC = 6,
  SG_STATUS_BUFFER_TOO_SMALL = 7,
  SG_STATUS_PANIC = 8,
} SgStatus;

typedef enum SgFusionMode {
  SG_FUSION_MODE_SINGLE = 0,
  SG_FUSION_MODE_EARLY = 1,
  SG_FUSION_MODE_LATE = 2,
} SgFusionMode;

/*
 Opaque trained model.
 */
typedef struct SgModel SgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *sg_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sg_version(void);

/*
 Short code (`LR`, `RL`, `P`, `B`, `UD`, `DU`) of class `index`, or NULL.
 */
const char *sg_gesture_code(uint32_t index);

/*
 `f (v + v_observer) / (v - v_source)`.

 # Safety
 `out` must be a valid pointer to a double.
 */
enum SgStatus sg_doppler_shift(double f_emit,
                               double v_sound,
                               double v_observer,
                               double v_source,
                               double *out);

/*
 Frequency of the echo off a hand moving at `v_hand` (positive = toward
 the device).

 # Safety
 `out` must be a valid pointer to a double.
 */
enum SgStatus sg_echo_frequency(double f_emit, double v_hand, double v_sound, double *out);

/*
 Writes the CW tone samples into `out` (capacity `cap`). The sample
 count is always stored in `written`; if `out` is NULL or too small the
 call returns `BufferTooSmall` without writing samples.

 # Safety
 `out` must point to `cap` doubles or be NULL; `written` must be valid.
 */
enum SgStatus sg_generate_cw(double frequency_hz,
                             uint32_t sample_rate_hz,
                             double duration_s,
                             double amplitude,
                             double *out,
                             uintptr_t cap,
                             uintptr_t *written);

/*
 Simulates one gesture clip (class index in `LR, RL, P, B, UD, DU`
 order) with default settings and writes it as a stereo WAV.

 # Safety
 `path` must be a NUL-terminated string.
 */
enum SgStatus sg_synth_gesture_wav(const char *path, uint32_t gesture, uint64_t seed);

/*
 Default preprocessing of a stereo WAV into top, bottom and mixdown
 images. Each output must hold `SG_IMAGE_PIXELS` doubles; any may be NULL.

 # Safety
 `path` must be a NUL-terminated string; non-NULL outputs must be valid.
 */
enum SgStatus sg_wav_to_images(const char *path, double *top, double *bottom, double *mix);

/*
 Loads a checkpoint written by the `train` command.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SgStatus sg_model_load(const char *path, struct SgModel **out);

/*
 Releases a model; NULL is ignored.

 # Safety
 `model` must come from `sg_model_load` and not be used afterwards.
 */
void sg_model_free(struct SgModel *model);

/*
 # Safety
 `model` and `out` must be valid pointers.
 */
enum SgStatus sg_model_mode(const struct SgModel *model, enum SgFusionMode *out);

/*
 Classifies a stereo WAV. `probs_out` (may be NULL) receives
 `SG_CLASS_COUNT` softmax probabilities.

 # Safety
 Pointers must be valid; `path` NUL-terminated.
 */
enum SgStatus sg_model_predict_wav(const struct SgModel *model,
                                   const char *path,
                                   uint32_t *class_out,
                                   double *probs_out);

/*
 Classifies preprocessed images. Single-mode models read only `mix`,
 late fusion only `top` and `bottom`; unused inputs may be NULL.

 # Safety
 Non-NULL image pointers must hold `SG_IMAGE_PIXELS` doubles.
 */
enum SgStatus sg_model_predict_images(const struct SgModel *model,
                                      const double *top,
                                      const double *bottom,
                                      const double *mix,
                                      uint32_t *class_out,
                                      double *probs_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SONAR_GESTURE_H */
