#ifndef RT4U_H
#define RT4U_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Values 2-4 match the command-line exit codes.
 */
typedef enum Rt4uStatus {
  RT4U_STATUS_OK = 0,
  RT4U_STATUS_NULL_POINTER = 1,
  RT4U_STATUS_INVALID_ARGUMENT = 2,
  RT4U_STATUS_INVALID_DATA = 3,
  RT4U_STATUS_NUMERIC = 4,
  RT4U_STATUS_PANIC = 5,
} Rt4uStatus;

/**
 * Fitted conformal calibration.
 */
typedef struct Rt4uCalibration Rt4uCalibration;

/**
 * Trained classifier parameters.
 */
typedef struct Rt4uModel Rt4uModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rt4u_version(void);

/**
 * Message for the last failed call on this thread, or an empty string.
 * Valid until the next call into this library on the same thread.
 */
const char *rt4u_last_error_message(void);

/**
 * Numerically stable softmax of `k` logits into `out`.
 *
 * # Safety
 * `logits` and `out` must each be valid for `k` doubles.
 */
enum Rt4uStatus rt4u_softmax(const double *logits, size_t k, double *out);

/**
 * Fit a conformal calibration from `n` probability rows (`n x k`) and their
 * labels.
 *
 * # Safety
 * `probs` valid for `n * k` doubles, `labels` for `n` values, `out` writable.
 */
enum Rt4uStatus rt4u_calibration_fit(const double *probs,
                                     const size_t *labels,
                                     size_t n,
                                     size_t k,
                                     double alpha,
                                     struct Rt4uCalibration **out);

/**
 * Load a calibration written by `rt4u conformal` (`calibration.json`).
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` writable.
 */
enum Rt4uStatus rt4u_calibration_load(const char *path, struct Rt4uCalibration **out);

/**
 * Threshold of the calibration; `INFINITY` when every set is the full
 * label set.
 *
 * # Safety
 * `cal` must be a live handle, `q_hat` writable.
 */
enum Rt4uStatus rt4u_calibration_q_hat(const struct Rt4uCalibration *cal, double *q_hat);

/**
 * Release a calibration handle. Null is a no-op.
 *
 * # Safety
 * `cal` must be null or a handle not yet freed.
 */
void rt4u_calibration_free(struct Rt4uCalibration *cal);

/**
 * Prediction set for one probability vector. Sorted member indices are
 * written to `members` (capacity `k`) and their count to `len`.
 *
 * # Safety
 * `cal` live handle, `probs` valid for `k` doubles, `members` for `k`
 * writes, `len` writable.
 */
enum Rt4uStatus rt4u_predict_set(const struct Rt4uCalibration *cal,
                                 const double *probs,
                                 size_t k,
                                 bool force_nonempty,
                                 size_t *members,
                                 size_t *len);

/**
 * Pseudo-labels from a prediction history laid out as `n x epochs x k`
 * logits. Writes `n x k` probabilities to `out`.
 *
 * # Safety
 * `history` valid for `n * epochs * k` doubles, `out` for `n * k`.
 */
enum Rt4uStatus rt4u_form_pseudo_labels(const double *history,
                                        size_t n,
                                        size_t epochs,
                                        size_t k,
                                        double *out);

/**
 * Study-level probabilities from `m` instance logit rows (`m x k`):
 * softmax of the summed logits, or of their mean when `mean` is set.
 *
 * # Safety
 * `logits` valid for `m * k` doubles, `out` for `k`.
 */
enum Rt4uStatus rt4u_aggregate_logits(const double *logits,
                                      size_t m,
                                      size_t k,
                                      bool mean,
                                      double *out);

/**
 * Load a model written by `rt4u train` or `rt4u rt4u` (`model.json`).
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` writable.
 */
enum Rt4uStatus rt4u_model_load(const char *path, struct Rt4uModel **out);

/**
 * Input dimension and class count of a model.
 *
 * # Safety
 * `model` live handle; `input_dim` and `num_classes` writable.
 */
enum Rt4uStatus rt4u_model_shape(const struct Rt4uModel *model,
                                 size_t *input_dim,
                                 size_t *num_classes);

/**
 * Logits for `n` feature rows (`n x dim`) into `out` (`n x num_classes`).
 *
 * # Safety
 * `model` live handle; `features` valid for `n * dim` doubles; `out` for
 * `n * num_classes`.
 */
enum Rt4uStatus rt4u_model_predict_logits(const struct Rt4uModel *model,
                                          const double *features,
                                          size_t n,
                                          size_t dim,
                                          double *out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void rt4u_model_free(struct Rt4uModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RT4U_H */
