#ifndef SPIKMAMBA_H
#define SPIKMAMBA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpkPreset {
  SPK_PRESET_TINY = 0,
  SPK_PRESET_DESK = 1,
  SPK_PRESET_PAPER = 2,
} SpkPreset;

typedef enum SpkStatus {
  SPK_STATUS_OK = 0,
  SPK_STATUS_NULL_POINTER = 1,
  SPK_STATUS_INVALID_ARGUMENT = 2,
  SPK_STATUS_IO = 3,
  SPK_STATUS_FORMAT = 4,
  SPK_STATUS_INTEGRITY = 5,
  SPK_STATUS_SHAPE = 6,
  SPK_STATUS_CONFIG = 7,
  SPK_STATUS_INTERNAL = 8,
} SpkStatus;

/**
 * Opaque model handle.
 */
typedef struct SpkModel SpkModel;

/**
 * Input and output geometry of a model. One input clip holds
 * `3 * frames * height * width` floats; a saliency map holds
 * `frames * (height / patch) * (width / patch)` doubles.
 */
typedef struct SpkGeometry {
  size_t frames;
  size_t height;
  size_t width;
  size_t patch;
  size_t n_classes;
} SpkGeometry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *spk_last_error(void);

/**
 * Creates a freshly initialized model from a built-in geometry.
 */
enum SpkStatus spk_model_new(enum SpkPreset preset_id, uint64_t seed, struct SpkModel **out);

/**
 * Loads a checkpoint file.
 */
enum SpkStatus spk_model_load(const char *path, struct SpkModel **out);

enum SpkStatus spk_model_save(const struct SpkModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 */
void spk_model_free(struct SpkModel *model);

enum SpkStatus spk_model_geometry(const struct SpkModel *model, struct SpkGeometry *out);

/**
 * Eval-mode logits for `batch` clips laid out `[batch, 3, T, H, W]`;
 * writes `batch * n_classes` floats.
 */
enum SpkStatus spk_model_logits(const struct SpkModel *model,
                                const float *input,
                                size_t input_len,
                                size_t batch,
                                float *out,
                                size_t out_len);

/**
 * Attention-branch token saliency for one clip `[3, T, H, W]`, each frame
 * min-max normalized; writes `[T, H / patch, W / patch]` doubles.
 */
enum SpkStatus spk_model_saliency(const struct SpkModel *model,
                                  const float *input,
                                  size_t input_len,
                                  double *out,
                                  size_t out_len);

/**
 * Reads an event file (binary, or CSV with the given sensor size) and bins
 * it into a model-ready clip of `3 * frames * height * width` floats.
 */
enum SpkStatus spk_events_to_frames(const char *path,
                                    uint32_t csv_sensor_height,
                                    uint32_t csv_sensor_width,
                                    size_t frames,
                                    size_t height,
                                    size_t width,
                                    float *out,
                                    size_t out_len);

/**
 * Closed-form parameter count and forward GFLOPs of a built-in geometry.
 */
enum SpkStatus spk_count(enum SpkPreset preset_id, uint64_t *params, double *gflops);

/**
 * Parameter count and forward GFLOPs of a loaded model.
 */
enum SpkStatus spk_model_count(const struct SpkModel *model, uint64_t *params, double *gflops);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIKMAMBA_H */
