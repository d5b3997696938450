/* C interface to the ecoevo library. Generated by cbindgen; do not edit. */

#ifndef ECOEVO_H
#define ECOEVO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an FFI call.
 */
typedef enum EcoStatus {
  EcoStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  EcoStatus_NullArgument = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  EcoStatus_InvalidUtf8 = 2,
  /**
   * File could not be read or written.
   */
  EcoStatus_Io = 3,
  /**
   * File contents could not be parsed.
   */
  EcoStatus_Parse = 4,
  /**
   * An argument or configuration value is out of range.
   */
  EcoStatus_InvalidArgument = 5,
  /**
   * A pipeline stage ran before the stage that produces its input.
   */
  EcoStatus_MissingInput = 6,
  /**
   * A model file has the wrong format or version.
   */
  EcoStatus_ModelFormat = 7,
  /**
   * A benchmark script asked for something impossible.
   */
  EcoStatus_InfeasibleScript = 8,
  /**
   * An internal panic was caught at the boundary.
   */
  EcoStatus_Panic = 9,
} EcoStatus;

/**
 * A loaded classification forest.
 */
typedef struct EcoForest EcoForest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed.
 */
const char *eco_version(void);

/**
 * Message of the last failing call on this thread. Never null; empty when
 * nothing failed yet. Valid until the next failing call on this thread.
 */
const char *eco_last_error(void);

/**
 * Frees a string an `eco_` function handed out through a `char**`.
 *
 * # Safety
 * `ptr` must be null or a pointer obtained from this library.
 */
void eco_string_free(char *ptr);

/**
 * Loads a model file written by the train stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EcoStatus eco_forest_load(const char *path, struct EcoForest **out);

/**
 * # Safety
 * `forest` must be null or a pointer from [`eco_forest_load`]; it must not
 * be used afterwards.
 */
void eco_forest_free(struct EcoForest *forest);

/**
 * Number of classes the model distinguishes; 0 for a null handle.
 *
 * # Safety
 * `forest` must be null or a valid handle.
 */
size_t eco_forest_n_classes(const struct EcoForest *forest);

/**
 * Number of input features the model expects; 0 for a null handle.
 *
 * # Safety
 * `forest` must be null or a valid handle.
 */
size_t eco_forest_n_features(const struct EcoForest *forest);

/**
 * Name of class `index`, borrowed from the handle; null when out of range.
 *
 * # Safety
 * `forest` must be null or a valid handle.
 */
const char *eco_forest_class_name(const struct EcoForest *forest, size_t index);

/**
 * Name of feature `index`, borrowed from the handle; null when out of range.
 *
 * # Safety
 * `forest` must be null or a valid handle.
 */
const char *eco_forest_feature_name(const struct EcoForest *forest, size_t index);

/**
 * Class probabilities for one input row. `x` holds `x_len` values which must
 * equal the model's feature count; `out` receives `out_len` values which
 * must equal the class count.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum EcoStatus eco_forest_predict_proba(const struct EcoForest *forest,
                                        const double *x,
                                        size_t x_len,
                                        double *out,
                                        size_t out_len);

/**
 * Per-feature attributions for one input row. `values` receives
 * `n_features * n_classes` numbers laid out feature-major
 * (`values[feature * n_classes + class]`); `base` receives `n_classes`
 * expected values. Attributions plus base sum to the predicted probability
 * per class.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum EcoStatus eco_forest_shap(const struct EcoForest *forest,
                               const double *x,
                               size_t x_len,
                               double *values,
                               size_t values_len,
                               double *base,
                               size_t base_len);

/**
 * Runs the full staged pipeline. `options_json` is the pipeline options
 * document, e.g. `{"input":{"source":"synth"}}`. On success, when
 * `summary_json` is non-null it receives the run summary as JSON; free it
 * with [`eco_string_free`].
 *
 * # Safety
 * `run_dir` and `options_json` must be NUL-terminated strings;
 * `summary_json` must be null or a valid pointer.
 */
enum EcoStatus eco_pipeline_run(const char *run_dir, const char *options_json, char **summary_json);

/**
 * Generates a synthetic benchmark into `dir`. `script_json` may be null for
 * the built-in benchmark script.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `script_json` null or likewise.
 */
enum EcoStatus eco_synth_generate(const char *dir, const char *script_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECOEVO_H */
