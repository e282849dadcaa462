#ifndef DIALEVAL_H
#define DIALEVAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum DialevalStatus {
  DIALEVAL_STATUS_OK = 0,
  DIALEVAL_STATUS_NULL_POINTER = 1,
  DIALEVAL_STATUS_INVALID_UTF8 = 2,
  DIALEVAL_STATUS_IO = 3,
  DIALEVAL_STATUS_PARSE = 4,
  DIALEVAL_STATUS_INVALID_DATA = 5,
  DIALEVAL_STATUS_DIMENSION = 6,
  DIALEVAL_STATUS_DEGENERATE = 7,
  DIALEVAL_STATUS_CONFIG = 8,
  DIALEVAL_STATUS_MODEL = 9,
  DIALEVAL_STATUS_OUT_OF_RANGE = 10,
  DIALEVAL_STATUS_PANIC = 11,
} DialevalStatus;

// Opaque corpus handle.
typedef struct DialevalCorpus DialevalCorpus;

// Opaque feature table handle: one 11-feature row and score per dialogue.
typedef struct DialevalFeatures DialevalFeatures;

// Opaque fitted model handle.
typedef struct DialevalModel DialevalModel;

// Boosting hyperparameters; obtain defaults from [`dialeval_gbt_config_default`].
typedef struct DialevalGbtConfig {
  size_t n_trees;
  double learning_rate;
  size_t max_depth;
  size_t min_samples_leaf;
  double subsample;
  uint64_t seed;
} DialevalGbtConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *dialeval_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dialeval_version(void);

// Number of behavior features per row.
size_t dialeval_feature_count(void);

struct DialevalGbtConfig dialeval_gbt_config_default(void);

// Loads a JSONL corpus.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DialevalStatus dialeval_corpus_load(const char *path, struct DialevalCorpus **out);

// Number of dialogues; 0 for NULL.
//
// # Safety
// `corpus` must be NULL or a live handle.
size_t dialeval_corpus_len(const struct DialevalCorpus *corpus);

// # Safety
// `corpus` must be NULL or a handle not yet freed.
void dialeval_corpus_free(struct DialevalCorpus *corpus);

// Extracts the feature table of every dialogue.
//
// # Safety
// `corpus` must be a live handle; `out` must be writable.
enum DialevalStatus dialeval_extract(const struct DialevalCorpus *corpus,
                                     int64_t ipu_threshold_ms,
                                     bool exclude_backchannel_tokens,
                                     struct DialevalFeatures **out);

// Number of rows; 0 for NULL.
//
// # Safety
// `features` must be NULL or a live handle.
size_t dialeval_features_len(const struct DialevalFeatures *features);

// Copies row `index` into `row_out` (11 values) and its score into `score_out`.
//
// # Safety
// `features` must be a live handle; `row_out` must hold 11 doubles;
// `score_out` may be NULL.
enum DialevalStatus dialeval_features_row(const struct DialevalFeatures *features,
                                          size_t index,
                                          double *row_out,
                                          double *score_out);

// # Safety
// `features` must be NULL or a handle not yet freed.
void dialeval_features_free(struct DialevalFeatures *features);

// Fits a model on the table's rows and scores.
//
// # Safety
// `features` must be a live handle; `config` must point to a config; `out`
// must be writable.
enum DialevalStatus dialeval_train(const struct DialevalFeatures *features,
                                   const struct DialevalGbtConfig *config,
                                   struct DialevalModel **out);

// # Safety
// `model` must be a live handle; `row` must hold `len` doubles; `out` must be writable.
enum DialevalStatus dialeval_model_predict(const struct DialevalModel *model,
                                           const double *row,
                                           size_t len,
                                           double *out);

// Exact Shapley values of `row` against the rows of `background`.
// Writes 11 values to `phi_out` and the mean background prediction to
// `base_out` (may be NULL).
//
// # Safety
// Handles must be live; `row` must hold `len` doubles; `phi_out` must hold 11.
enum DialevalStatus dialeval_model_shap(const struct DialevalModel *model,
                                        const struct DialevalFeatures *background,
                                        const double *row,
                                        size_t len,
                                        double *phi_out,
                                        double *base_out);

// Leave-one-dialogue-out mean absolute error.
//
// # Safety
// `features` must be a live handle; `config` must point to a config; `mae_out`
// must be writable.
enum DialevalStatus dialeval_loocv_mae(const struct DialevalFeatures *features,
                                       const struct DialevalGbtConfig *config,
                                       double *mae_out);

// Writes the model in its text format.
//
// # Safety
// `model` must be a live handle; `path` must be a NUL-terminated string.
enum DialevalStatus dialeval_model_save(const struct DialevalModel *model, const char *path);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DialevalStatus dialeval_model_load(const char *path, struct DialevalModel **out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void dialeval_model_free(struct DialevalModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIALEVAL_H */
