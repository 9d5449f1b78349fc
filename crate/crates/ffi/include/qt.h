#ifndef QT_H
#define QT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QtStatus {
  QT_STATUS_OK = 0,
  QT_STATUS_NULL_POINTER = 1,
  QT_STATUS_INVALID_UTF8 = 2,
  QT_STATUS_SHAPE = 3,
  QT_STATUS_PARAM = 4,
  QT_STATUS_INPUT = 5,
  QT_STATUS_CONFIG = 6,
  QT_STATUS_DEGENERATE = 7,
  QT_STATUS_NUMERIC = 8,
  QT_STATUS_PARSE = 9,
  QT_STATUS_FORMAT = 10,
  QT_STATUS_IO = 11,
  QT_STATUS_BUFFER_TOO_SMALL = 12,
  QT_STATUS_PANIC = 13,
} QtStatus;

// Sentence vectors with `u64` ids.
typedef struct QtEmbeddings QtEmbeddings;

// A trained sentence encoder.
typedef struct QtModel QtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *qt_last_error(void);

// Library version as a static NUL-terminated string.
const char *qt_version(void);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum QtStatus qt_model_load(const char *path, struct QtModel **out);

// # Safety
// `model` must come from [`qt_model_load`] and not be used afterwards.
void qt_model_free(struct QtModel *model);

// Sentence-vector dimension of the model.
//
// # Safety
// `model` and `out` must be valid pointers.
enum QtStatus qt_model_dim(const struct QtModel *model, size_t *out);

// Encodes `n` whitespace-tokenized sentences into a new collection with ids
// `0..n`.
//
// # Safety
// `sentences` must point to `n` NUL-terminated strings; `out` must be valid.
enum QtStatus qt_model_embed(const struct QtModel *model,
                             const char *const *sentences,
                             size_t n,
                             struct QtEmbeddings **out);

// Reads an exported embedding file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum QtStatus qt_embeddings_load(const char *path, struct QtEmbeddings **out);

// # Safety
// `emb` must come from this library and not be used afterwards.
void qt_embeddings_free(struct QtEmbeddings *emb);

// Number of vectors and their dimension.
//
// # Safety
// All pointers must be valid.
enum QtStatus qt_embeddings_shape(const struct QtEmbeddings *emb, size_t *out_len, size_t *out_dim);

// Copies the vector for `id` into `out`, which holds `cap` doubles.
//
// # Safety
// `emb` must be valid and `out` must hold `cap` doubles.
enum QtStatus qt_embeddings_vector(const struct QtEmbeddings *emb,
                                   uint64_t id,
                                   double *out,
                                   size_t cap);

// Top `k` ids by cosine to `query`, best first. The output arrays hold at
// least `k` entries; `out_count` receives how many were written.
//
// # Safety
// `query` must hold `dim` doubles and the output arrays `k` entries.
enum QtStatus qt_embeddings_nearest(const struct QtEmbeddings *emb,
                                    const double *query,
                                    size_t dim,
                                    size_t k,
                                    uint64_t *out_ids,
                                    double *out_scores,
                                    size_t *out_count);

// Top `k` ids by cosine to `c + b - a`, using the stored vectors of ids
// `a`, `b` and `c`.
//
// # Safety
// The output arrays must hold `k` entries.
enum QtStatus qt_embeddings_analogy(const struct QtEmbeddings *emb,
                                    uint64_t a,
                                    uint64_t b,
                                    uint64_t c,
                                    size_t k,
                                    uint64_t *out_ids,
                                    double *out_scores,
                                    size_t *out_count);

// Pearson correlation of two length-`n` series.
//
// # Safety
// `x` and `y` must hold `n` doubles; `out` must be valid.
enum QtStatus qt_pearson(const double *x, const double *y, size_t n, double *out);

// Spearman rank correlation of two length-`n` series.
//
// # Safety
// `x` and `y` must hold `n` doubles; `out` must be valid.
enum QtStatus qt_spearman(const double *x, const double *y, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QT_H */
