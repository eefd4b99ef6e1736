#ifndef TWOSTAGE_H
#define TWOSTAGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  TS_STATUS_INVALID_ARGUMENT = 2,
  TS_STATUS_IO = 3,
  TS_STATUS_PARSE = 4,
  TS_STATUS_DATA = 5,
  TS_STATUS_MODEL = 6,
  TS_STATUS_BUFFER_TOO_SMALL = 7,
  TS_STATUS_PANIC = 8,
} TsStatus;

/**
 * A labeled corpus.
 */
typedef struct TsCorpus TsCorpus;

/**
 * A featurized corpus (rows are L2-normalized hashed n-gram counts).
 */
typedef struct TsFeatures TsFeatures;

/**
 * A trained classifier loaded from a checkpoint.
 */
typedef struct TsModel TsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length in bytes,
 * excluding the terminator; 0 when there is no error recorded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ts_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Load a `label<TAB>text` corpus file, keeping at most `max_tokens` tokens
 * per document.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum TsStatus ts_corpus_load(const char *path, size_t max_tokens, struct TsCorpus **out);

/**
 * Parse corpus text held in memory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid pointer.
 */
enum TsStatus ts_corpus_parse(const char *text, size_t max_tokens, struct TsCorpus **out);

/**
 * Generate a synthetic bag-of-tokens corpus; class `c` favors the token block
 * `[c*B, (c+1)*B)` with `B = vocab_size / num_classes`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TsStatus ts_corpus_generate(size_t num_classes,
                                 size_t vocab_size,
                                 size_t doc_length,
                                 size_t samples_per_class,
                                 double separation,
                                 double shift,
                                 uint64_t seed,
                                 struct TsCorpus **out);

/**
 * Write a corpus in the TSV format.
 *
 * # Safety
 * `corpus` must be a live handle; `path` a NUL-terminated string.
 */
enum TsStatus ts_corpus_write(const struct TsCorpus *corpus, const char *path);

/**
 * # Safety
 * `corpus` must be a live handle; `out` a valid pointer.
 */
enum TsStatus ts_corpus_len(const struct TsCorpus *corpus, size_t *out);

/**
 * # Safety
 * `corpus` must be a live handle; `out` a valid pointer.
 */
enum TsStatus ts_corpus_num_classes(const struct TsCorpus *corpus, size_t *out);

/**
 * Per-class sample counts, in class-index order.
 *
 * # Safety
 * `corpus` must be a live handle; `counts` must hold `capacity` values;
 * `written` may be null.
 */
enum TsStatus ts_corpus_histogram(const struct TsCorpus *corpus,
                                  size_t *counts,
                                  size_t capacity,
                                  size_t *written);

/**
 * Name of class `class` as a NUL-terminated string (see
 * `ts_last_error_message` for the truncation and return conventions).
 *
 * # Safety
 * `corpus` must be a live handle; `buf` must hold `len` bytes; `needed` may
 * be null.
 */
enum TsStatus ts_corpus_class_name(const struct TsCorpus *corpus,
                                   size_t class_,
                                   char *buf,
                                   size_t len,
                                   size_t *needed);

/**
 * Shrink `minority_class` of a two-class corpus to `floor(ratio * majority)`.
 *
 * # Safety
 * `corpus` must be a live handle; `out` a valid pointer.
 */
enum TsStatus ts_corpus_apply_ratio(const struct TsCorpus *corpus,
                                    size_t minority_class,
                                    double ratio,
                                    uint64_t seed,
                                    struct TsCorpus **out);

/**
 * Shrink each listed class to exactly `target_size` samples.
 *
 * # Safety
 * `corpus` must be a live handle; `classes` must hold `num_classes` values;
 * `out` a valid pointer.
 */
enum TsStatus ts_corpus_apply_step(const struct TsCorpus *corpus,
                                   const size_t *classes,
                                   size_t num_classes,
                                   size_t target_size,
                                   uint64_t seed,
                                   struct TsCorpus **out);

/**
 * Long-tail profile: the class of frequency rank `i` keeps
 * `floor(N_max * mu^i)` samples.
 *
 * # Safety
 * `corpus` must be a live handle; `out` a valid pointer.
 */
enum TsStatus ts_corpus_apply_longtail(const struct TsCorpus *corpus,
                                       double mu,
                                       uint64_t seed,
                                       struct TsCorpus **out);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void ts_corpus_free(struct TsCorpus *corpus);

/**
 * Hashed bag of 1..=`ngram_max`-grams in `dim` buckets.
 *
 * # Safety
 * `corpus` must be a live handle; `out` a valid pointer.
 */
enum TsStatus ts_featurize(const struct TsCorpus *corpus,
                           size_t dim,
                           size_t ngram_max,
                           struct TsFeatures **out);

/**
 * # Safety
 * `features` must be a live handle; `rows`/`dim` valid pointers.
 */
enum TsStatus ts_features_shape(const struct TsFeatures *features, size_t *rows, size_t *dim);

/**
 * Copy the row-major feature values (`rows * dim` floats).
 *
 * # Safety
 * `features` must be a live handle; `values` must hold `capacity` floats;
 * `written` may be null.
 */
enum TsStatus ts_features_values(const struct TsFeatures *features,
                                 float *values,
                                 size_t capacity,
                                 size_t *written);

/**
 * # Safety
 * `features` must be null or a handle not yet freed.
 */
void ts_features_free(struct TsFeatures *features);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum TsStatus ts_model_load(const char *path, struct TsModel **out);

/**
 * Load a checkpoint from memory.
 *
 * # Safety
 * `bytes` must hold `len` bytes; `out` a valid pointer.
 */
enum TsStatus ts_model_from_bytes(const uint8_t *bytes, size_t len, struct TsModel **out);

/**
 * # Safety
 * `model` must be a live handle; `input_dim`/`num_classes` valid pointers.
 */
enum TsStatus ts_model_shape(const struct TsModel *model, size_t *input_dim, size_t *num_classes);

/**
 * Predicted class per feature row.
 *
 * # Safety
 * `model` and `features` must be live handles; `labels` must hold
 * `capacity` values; `written` may be null.
 */
enum TsStatus ts_model_predict(const struct TsModel *model,
                               const struct TsFeatures *features,
                               size_t *labels,
                               size_t capacity,
                               size_t *written);

/**
 * Raw logits, row-major (`rows * num_classes` floats).
 *
 * # Safety
 * `model` and `features` must be live handles; `logits` must hold
 * `capacity` floats; `written` may be null.
 */
enum TsStatus ts_model_logits(const struct TsModel *model,
                              const struct TsFeatures *features,
                              float *logits,
                              size_t capacity,
                              size_t *written);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ts_model_free(struct TsModel *model);

/**
 * LDAM margins `max_margin * (n_c / n_min)^(-1/4)` for the given class
 * counts, written to `margins[..num_classes]`.
 *
 * # Safety
 * `counts` and `margins` must each hold `num_classes` values.
 */
enum TsStatus ts_ldam_margins(const size_t *counts,
                              size_t num_classes,
                              double max_margin,
                              double *margins);

/**
 * Effective number of samples `(1 - beta^n) / (1 - beta)`; `n` when `beta`
 * is 0 gives 1. Returns NaN for `beta` outside `[0, 1)`.
 */
double ts_effective_number(size_t n, double beta);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOSTAGE_H */
