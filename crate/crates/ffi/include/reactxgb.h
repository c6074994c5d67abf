#ifndef REACTXGB_H
#define REACTXGB_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

/**
 * Outcome of an API call. Values are stable.
 */
typedef enum {
  RXGB_STATUS_OK = 0,
  RXGB_STATUS_NULL_ARGUMENT = 1,
  RXGB_STATUS_INVALID_ARGUMENT = 2,
  RXGB_STATUS_SHAPE = 3,
  RXGB_STATUS_FORMAT = 4,
  RXGB_STATUS_SPEC = 5,
  RXGB_STATUS_CONFIG = 6,
  RXGB_STATUS_NON_FINITE = 7,
  RXGB_STATUS_MISSING_ARTIFACT = 8,
  RXGB_STATUS_DIGEST = 9,
  RXGB_STATUS_NETWORK = 10,
  RXGB_STATUS_IO = 11,
  RXGB_STATUS_UTF8 = 12,
  RXGB_STATUS_PANIC = 13,
} RxgbStatus;

/**
 * Pixel mapping applied to `u8` images.
 */
typedef enum {
  /**
   * `p / 127.5 − 1`
   */
  RXGB_NORMALIZATION_SYMMETRIC = 0,
  /**
   * `p / 255`
   */
  RXGB_NORMALIZATION_UNIT = 1,
} RxgbNormalization;

/**
 * A trained tree ensemble.
 */
typedef struct RxgbEnsemble RxgbEnsemble;

/**
 * A trained backbone (with or without its FC head).
 */
typedef struct RxgbModel RxgbModel;

/**
 * Whole-network cost totals.
 */
typedef struct {
  uint64_t bops;
  /**
   * All real-valued operations (MAC and elementwise).
   */
  uint64_t flops;
  /**
   * Multiply-accumulate FLOPs only.
   */
  uint64_t mac_flops;
  uint64_t param_bits;
  /**
   * `bops / 64 + flops`.
   */
  double ops;
} RxgbCost;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next API call on the same thread.
 */
const char *rxgb_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rxgb_version(void);

/**
 * Loads a stage-1 checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
RxgbStatus rxgb_model_load(const char *path, RxgbModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`rxgb_model_load`] and not be used afterwards.
 */
void rxgb_model_free(RxgbModel *model);

/**
 * Input channels, height and width.
 *
 * # Safety
 * All pointers must be valid.
 */
RxgbStatus rxgb_model_input_shape(const RxgbModel *model,
                                  size_t *channels,
                                  size_t *height,
                                  size_t *width);

/**
 * Pooled feature width, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t rxgb_model_feature_dim(const RxgbModel *model);

/**
 * Class count of the network description, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t rxgb_model_class_count(const RxgbModel *model);

/**
 * Frozen features of `count` row-major `u8` images into
 * `out[count × feature_dim]`.
 *
 * # Safety
 * `pixels` must hold `count·C·H·W` bytes and `out` `count·feature_dim` doubles.
 */
RxgbStatus rxgb_extract_features(const RxgbModel *model,
                                 const uint8_t *pixels,
                                 size_t count,
                                 RxgbNormalization normalization,
                                 double *out);

/**
 * FC-head classes of `count` images into `classes[count]`.
 *
 * # Safety
 * As [`rxgb_extract_features`]; `classes` must hold `count` entries.
 */
RxgbStatus rxgb_predict_fc(const RxgbModel *model,
                           const uint8_t *pixels,
                           size_t count,
                           RxgbNormalization normalization,
                           uint32_t *classes);

/**
 * Loads a tree ensemble.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
RxgbStatus rxgb_ensemble_load(const char *path, RxgbEnsemble **out);

/**
 * Releases an ensemble; null is ignored.
 *
 * # Safety
 * `ensemble` must come from [`rxgb_ensemble_load`] and not be used afterwards.
 */
void rxgb_ensemble_free(RxgbEnsemble *ensemble);

/**
 * Number of trees, or 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be null or a live handle.
 */
size_t rxgb_ensemble_tree_count(const RxgbEnsemble *ensemble);

/**
 * Expected feature width, or 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be null or a live handle.
 */
size_t rxgb_ensemble_feature_dim(const RxgbEnsemble *ensemble);

/**
 * Class count, or 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be null or a live handle.
 */
size_t rxgb_ensemble_class_count(const RxgbEnsemble *ensemble);

/**
 * Tree-head predictions for `count × dim` features. `probs` may be null;
 * otherwise it receives `count × class_count` probabilities.
 *
 * # Safety
 * Buffers must hold the sizes described above.
 */
RxgbStatus rxgb_ensemble_predict(const RxgbEnsemble *ensemble,
                                 const double *features,
                                 size_t count,
                                 size_t dim,
                                 uint32_t *classes,
                                 double *probs);

/**
 * End-to-end hybrid inference: backbone features, tree margins, softmax.
 * `probs` may be null.
 *
 * # Safety
 * As [`rxgb_extract_features`]; `classes` holds `count` entries and `probs`
 * (when non-null) `count × class_count`.
 */
RxgbStatus rxgb_predict_hybrid(const RxgbModel *model,
                               const RxgbEnsemble *ensemble,
                               const uint8_t *pixels,
                               size_t count,
                               RxgbNormalization normalization,
                               uint32_t *classes,
                               double *probs);

/**
 * Cost totals of a network description: `reference`, `reference-half`, a
 * spec file path, each optionally suffixed `:no-head`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
RxgbStatus rxgb_network_cost(const char *spec, bool weight_scaling, RxgbCost *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REACTXGB_H */
