#ifndef RFEXPLAIN_H
#define RFEXPLAIN_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RFX_STATUS_OK = 0,
  RFX_STATUS_NULL_POINTER = 1,
  RFX_STATUS_INVALID_ARGUMENT = 2,
  RFX_STATUS_IO = 3,
  RFX_STATUS_DATA = 4,
  RFX_STATUS_MODEL = 5,
  RFX_STATUS_DIMENSION_MISMATCH = 6,
  RFX_STATUS_BUFFER_TOO_SMALL = 7,
  RFX_STATUS_PANIC = 8,
} RfxStatus;

typedef enum {
  RFX_PROXIMITY_ORIGINAL = 0,
  RFX_PROXIMITY_OOB = 1,
  RFX_PROXIMITY_GAP = 2,
} RfxProximity;

typedef struct RfxDataset RfxDataset;

typedef struct RfxForest RfxForest;

/**
 * Symmetric distance matrix over the training rows of a forest.
 */
typedef struct RfxMatrix RfxMatrix;

/**
 * Forest hyper-parameters. `max_depth == 0` grows until leaves are pure;
 * `max_features <= 0` means the square-root rule.
 */
typedef struct {
  size_t n_trees;
  size_t max_depth;
  size_t min_leaf;
  double max_features;
  bool balanced;
  uint64_t seed;
} RfxForestParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *rfx_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rfx_version(void);

RfxForestParams rfx_forest_params_default(void);

/**
 * Build a dataset from a row-major `n_rows × n_features` matrix and dense
 * class labels `0..c`.
 *
 * # Safety
 * `features` must point to `n_rows * n_features` doubles and `labels` to
 * `n_rows` values. `out` must be writable.
 */
RfxStatus rfx_dataset_new(const double *features,
                          const uint32_t *labels,
                          size_t n_rows,
                          size_t n_features,
                          RfxDataset **out);

/**
 * Load a dataset snapshot written by the command-line tool.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
RfxStatus rfx_dataset_load(const char *path, RfxDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library that was not yet freed.
 */
void rfx_dataset_free(RfxDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; returns 0 for null.
 */
size_t rfx_dataset_n_rows(const RfxDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; returns 0 for null.
 */
size_t rfx_dataset_n_features(const RfxDataset *ds);

/**
 * Fit a forest on `ds`.
 *
 * # Safety
 * `ds` must be a live handle, `params` readable and `out` writable.
 */
RfxStatus rfx_forest_fit(const RfxDataset *ds, const RfxForestParams *params, RfxForest **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
RfxStatus rfx_forest_load(const char *path, RfxForest **out);

/**
 * # Safety
 * `forest` must be a live handle and `path` a NUL-terminated string.
 */
RfxStatus rfx_forest_save(const RfxForest *forest, const char *path);

/**
 * # Safety
 * `forest` must be null or a handle from this library that was not yet freed.
 */
void rfx_forest_free(RfxForest *forest);

/**
 * # Safety
 * `forest` must be a live handle; returns 0 for null.
 */
size_t rfx_forest_n_classes(const RfxForest *forest);

/**
 * # Safety
 * `forest` must be a live handle; returns 0 for null.
 */
size_t rfx_forest_n_train(const RfxForest *forest);

/**
 * Predicted class of one feature row.
 *
 * # Safety
 * `x` must point to `n_features` doubles and `out_class` be writable.
 */
RfxStatus rfx_forest_predict(const RfxForest *forest,
                             const double *x,
                             size_t n_features,
                             uint32_t *out_class);

/**
 * Class probabilities of one feature row into `out[0..n_classes]`.
 *
 * # Safety
 * `x` must point to `n_features` doubles and `out` to `out_len` doubles.
 */
RfxStatus rfx_forest_predict_proba(const RfxForest *forest,
                                   const double *x,
                                   size_t n_features,
                                   double *out,
                                   size_t out_len);

/**
 * Proximities of a new row to every training row, `out[0..n_train]`.
 *
 * # Safety
 * `x` must point to `n_features` doubles and `out` to `out_len` doubles.
 */
RfxStatus rfx_proximity_row(const RfxForest *forest,
                            RfxProximity kind,
                            const double *x,
                            size_t n_features,
                            double *out,
                            size_t out_len);

/**
 * Distance matrix `1 − p` over the forest's training rows. GAP is
 * symmetrized first and undefined entries count as zero proximity.
 *
 * # Safety
 * `forest` must be a live handle and `out` writable.
 */
RfxStatus rfx_distance_matrix(const RfxForest *forest, RfxProximity kind, RfxMatrix **out);

/**
 * # Safety
 * `m` must be null or a handle from this library that was not yet freed.
 */
void rfx_matrix_free(RfxMatrix *m);

/**
 * Side length of the matrix; 0 for null.
 *
 * # Safety
 * `m` must be a live handle.
 */
size_t rfx_matrix_len(const RfxMatrix *m);

/**
 * Copy the matrix row-major into `out[0..n*n]`.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles.
 */
RfxStatus rfx_matrix_copy(const RfxMatrix *m, double *out, size_t out_len);

/**
 * Semi-factual (farthest same-class row) and counter-factual (nearest
 * other-class row) of training row `query`.
 *
 * # Safety
 * Handles must be live; `semi` and `counter` writable.
 */
RfxStatus rfx_factuals(const RfxMatrix *m,
                       const RfxDataset *train,
                       size_t query,
                       size_t *semi,
                       size_t *counter);

/**
 * k-medoids prototypes, `per_class` per class, written as training row
 * indices ordered by class. `written` receives the count.
 *
 * # Safety
 * Handles must be live; `out` must point to `out_len` writable values.
 */
RfxStatus rfx_prototypes(const RfxMatrix *m,
                         const RfxDataset *train,
                         size_t per_class,
                         size_t *out,
                         size_t out_len,
                         size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFEXPLAIN_H */
