#ifndef FGN_H
#define FGN_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum FgnStatus {
  FgnStatus_Ok = 0,
  FgnStatus_NullPointer = 1,
  FgnStatus_InvalidArgument = 2,
  FgnStatus_NumericFailure = 3,
  FgnStatus_IoFailure = 4,
  FgnStatus_FormatError = 5,
} FgnStatus;

/**
 * Opaque handle to a loaded network.
 */
typedef struct FgnModel FgnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a model file. On success writes a handle the caller must release
 * with `fgn_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FgnStatus fgn_model_load(const char *path, struct FgnModel **out);

/**
 * Save the model to a file.
 *
 * # Safety
 * `model` must come from `fgn_model_load`; `path` must be NUL-terminated.
 */
enum FgnStatus fgn_model_save(const struct FgnModel *model, const char *path);

/**
 * Release a handle. A null pointer is a no-op.
 *
 * # Safety
 * `model` must come from `fgn_model_load` and not be used afterwards.
 */
void fgn_model_free(struct FgnModel *model);

/**
 * Input width of the first layer; 0 when it is not a dense layer.
 *
 * # Safety
 * `model` must be a valid handle.
 */
uintptr_t fgn_model_input_dim(const struct FgnModel *model);

/**
 * Output width of the last layer; 0 when it is not a dense layer.
 *
 * # Safety
 * `model` must be a valid handle.
 */
uintptr_t fgn_model_output_dim(const struct FgnModel *model);

/**
 * Run the network on `input[0..input_len]`, writing
 * `logits[0..logits_len]`. `logits_len` must match the output width.
 *
 * # Safety
 * Both buffers must be valid for their stated lengths.
 */
enum FgnStatus fgn_model_predict(const struct FgnModel *model,
                                 const double *input,
                                 uintptr_t input_len,
                                 double *logits,
                                 uintptr_t logits_len);

/**
 * Predicted class and softmax confidence for one input.
 *
 * # Safety
 * `input` must be valid for `input_len`; out pointers must be valid.
 */
enum FgnStatus fgn_model_confidence(const struct FgnModel *model,
                                    const double *input,
                                    uintptr_t input_len,
                                    uintptr_t *out_class,
                                    double *out_confidence);

/**
 * Fast gradient sign attack. Writes the adversarial input over
 * `adversarial[0..input_len]` and sets `out_success` to 1 when the attack
 * predicate holds.
 *
 * # Safety
 * All buffers must be valid for `input_len`; out pointers must be valid.
 */
enum FgnStatus fgn_model_fgsm(const struct FgnModel *model,
                              const double *input,
                              uintptr_t input_len,
                              uintptr_t label,
                              double epsilon,
                              double *adversarial,
                              uint8_t *out_success);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGN_H */
