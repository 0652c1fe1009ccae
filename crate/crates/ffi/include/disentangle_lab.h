#ifndef DISENTANGLE_LAB_H
#define DISENTANGLE_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DlStatus {
  DL_STATUS_OK = 0,
  DL_STATUS_NULL_POINTER = 1,
  DL_STATUS_INVALID_ARGUMENT = 2,
  DL_STATUS_CHECKPOINT = 3,
  DL_STATUS_NUMERICAL = 4,
  DL_STATUS_PANIC = 5,
} DlStatus;

// Ensemble loaded from a checkpoint file.
typedef struct DlModel DlModel;

typedef struct DlF1Report {
  double f1_d;
  double f1_nd;
  double f1_avg;
} DlF1Report;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *dl_last_error_message(void);

// Loads a checkpoint and stores a new handle in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum DlStatus dl_model_load(const char *path, struct DlModel **out);

// # Safety
// `model` must come from [`dl_model_load`] and not be freed already; null
// is ignored.
void dl_model_free(struct DlModel *model);

// # Safety
// `model` must be a live handle or null (returns 0).
size_t dl_model_num_members(const struct DlModel *model);

// Samples per input segment; 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t dl_model_segment_len(const struct DlModel *model);

// Embedding width; 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t dl_model_embedding_dim(const struct DlModel *model);

// Runs one member on a raw segment of `dl_model_segment_len` samples. The
// segment is normalized to zero mean and unit variance first, as in
// training. Writes the condition probability and the embedding.
//
// # Safety
// `samples` must hold `len` floats, `out_embedding` room for
// `embedding_len` floats and `out_probability` must be writable.
enum DlStatus dl_model_forward(const struct DlModel *model,
                               size_t member,
                               const float *samples,
                               size_t len,
                               double *out_probability,
                               float *out_embedding,
                               size_t embedding_len);

// Sign-flipped GDV of `n` row-major points of width `dim`.
//
// # Safety
// `points` must hold `n * dim` doubles, `labels` `n` integers and `out`
// must be writable.
enum DlStatus dl_gdv(const double *points,
                     size_t n,
                     size_t dim,
                     const int64_t *labels,
                     double *out);

// Per-class and macro F1 with 1 as the positive class.
//
// # Safety
// `pred` and `truth` must hold `n` bytes each; `out` must be writable.
enum DlStatus dl_f1_report(const uint8_t *pred,
                           const uint8_t *truth,
                           size_t n,
                           struct DlF1Report *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISENTANGLE_LAB_H */
