#ifndef LPMGH_H
#define LPMGH_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum LpmghStatus {
  LPMGH_STATUS_OK = 0,
  LPMGH_STATUS_NULL_POINTER = 1,
  LPMGH_STATUS_INVALID_ARGUMENT = 2,
  LPMGH_STATUS_IO = 3,
  LPMGH_STATUS_FORMAT = 4,
  LPMGH_STATUS_VALUE = 5,
  LPMGH_STATUS_CONFIG = 6,
  LPMGH_STATUS_SHAPE = 7,
  LPMGH_STATUS_NUMERIC = 8,
  LPMGH_STATUS_DEGENERATE = 9,
  LPMGH_STATUS_MISSING_VIEW = 10,
  LPMGH_STATUS_BUFFER_TOO_SMALL = 11,
  LPMGH_STATUS_PANIC = 12,
} LpmghStatus;

typedef struct LpmghCodes LpmghCodes;

/*
 Views and optional labels collected before training or encoding.
 */
typedef struct LpmghDataset LpmghDataset;

typedef struct LpmghModel LpmghModel;

/*
 Training settings. Obtain defaults from [`lpmgh_train_config_default`].
 */
typedef struct LpmghTrainConfig {
  size_t bits;
  size_t max_outer_iters;
  double rel_tol;
  double mu_init;
  uint64_t seed;
  /*
   0 selects `min(300, n/2)`.
   */
  size_t anchors;
  size_t anchor_neighbors;
  /*
   Values <= 0 select the automatic bandwidth.
   */
  double bandwidth;
  size_t kmeans_iters;
  size_t stiefel_max_iters;
} LpmghTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failed call on this thread, or NULL.
 The pointer stays valid until the next call into this library on the same thread.
 */
const char *lpmgh_last_error_message(void);

/*
 # Safety
 `out` must be a valid pointer to writable storage for a handle.
 */
enum LpmghStatus lpmgh_dataset_new(struct LpmghDataset **out);

/*
 Appends a view of `n` rows and `d` columns read row-major from `values`.

 # Safety
 `ds` must be a live dataset handle and `values` must point to `n * d` doubles.
 */
enum LpmghStatus lpmgh_dataset_add_view(struct LpmghDataset *ds,
                                        const double *values,
                                        size_t n,
                                        size_t d);

/*
 # Safety
 `ds` must be a live dataset handle and `labels` must point to `n` integers.
 */
enum LpmghStatus lpmgh_dataset_set_labels(struct LpmghDataset *ds, const int64_t *labels, size_t n);

/*
 Synthetic clustered dataset with one view per entry of `dims`.

 # Safety
 `dims` must point to `num_views` sizes and `out` must be writable.
 */
enum LpmghStatus lpmgh_dataset_synth(size_t n,
                                     size_t clusters,
                                     const size_t *dims,
                                     size_t num_views,
                                     double noise,
                                     uint64_t seed,
                                     struct LpmghDataset **out);

/*
 Number of rows, or 0 for a null or empty dataset.

 # Safety
 `ds` must be null or a live dataset handle.
 */
size_t lpmgh_dataset_len(const struct LpmghDataset *ds);

/*
 # Safety
 `ds` must be null or a live dataset handle.
 */
size_t lpmgh_dataset_num_views(const struct LpmghDataset *ds);

/*
 Copies up to `len` labels into `out`. Fails with `BufferTooSmall` if `len` is short.

 # Safety
 `ds` must be a live dataset handle and `out` must point to `len` writable integers.
 */
enum LpmghStatus lpmgh_dataset_labels(const struct LpmghDataset *ds, int64_t *out, size_t len);

/*
 # Safety
 `ds` must be null or a handle from this library that has not been freed.
 */
void lpmgh_dataset_free(struct LpmghDataset *ds);

/*
 # Safety
 `out` must point to writable storage for one config.
 */
enum LpmghStatus lpmgh_train_config_default(struct LpmghTrainConfig *out);

/*
 Trains a model. `codes_out` may be NULL when the training codes are not needed.

 # Safety
 `ds` and `config` must be valid; `model_out` must be writable; `codes_out` null or writable.
 */
enum LpmghStatus lpmgh_train(const struct LpmghDataset *ds,
                             const struct LpmghTrainConfig *config,
                             struct LpmghModel **model_out,
                             struct LpmghCodes **codes_out);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum LpmghStatus lpmgh_model_load(const char *path, struct LpmghModel **out);

/*
 # Safety
 `model` must be a live handle and `path` a NUL-terminated string.
 */
enum LpmghStatus lpmgh_model_save(const struct LpmghModel *model, const char *path);

/*
 Code length in bits, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t lpmgh_model_bits(const struct LpmghModel *model);

/*
 # Safety
 `model` must be null or a live handle.
 */
size_t lpmgh_model_num_views(const struct LpmghModel *model);

/*
 Copies the learned view weights into `out`, which must hold one value per view.

 # Safety
 `model` must be a live handle and `out` must point to `len` writable doubles.
 */
enum LpmghStatus lpmgh_model_view_weights(const struct LpmghModel *model, double *out, size_t len);

/*
 # Safety
 `model` must be null or a handle from this library that has not been freed.
 */
void lpmgh_model_free(struct LpmghModel *model);

/*
 Encodes every row of `ds` with `model`.

 # Safety
 `model` and `ds` must be live handles and `out` writable.
 */
enum LpmghStatus lpmgh_encode(const struct LpmghModel *model,
                              const struct LpmghDataset *ds,
                              struct LpmghCodes **out);

/*
 # Safety
 `codes` must be null or a live handle.
 */
size_t lpmgh_codes_rows(const struct LpmghCodes *codes);

/*
 # Safety
 `codes` must be null or a live handle.
 */
size_t lpmgh_codes_bits(const struct LpmghCodes *codes);

/*
 Copies the `rows * bits` entries (each -1 or +1) row-major into `out`.

 # Safety
 `codes` must be a live handle and `out` must point to `len` writable bytes.
 */
enum LpmghStatus lpmgh_codes_copy(const struct LpmghCodes *codes, int8_t *out, size_t len);

/*
 # Safety
 `codes` must be a live handle and `path` a NUL-terminated string.
 */
enum LpmghStatus lpmgh_codes_save(const struct LpmghCodes *codes, const char *path);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum LpmghStatus lpmgh_codes_load(const char *path, struct LpmghCodes **out);

/*
 # Safety
 `codes` must be null or a handle from this library that has not been freed.
 */
void lpmgh_codes_free(struct LpmghCodes *codes);

/*
 Ranks every row of `db` against row `query_row` of `queries` by Hamming
 distance, ties by ascending row index. Writes `rows(db)` indices and distances.

 # Safety
 Handles must be live; `ids_out` and `dist_out` must each hold `len` elements.
 */
enum LpmghStatus lpmgh_rank(const struct LpmghCodes *queries,
                            size_t query_row,
                            const struct LpmghCodes *db,
                            size_t *ids_out,
                            uint32_t *dist_out,
                            size_t len);

/*
 Mean average precision of `queries` against `db` with relevance by label equality.

 # Safety
 Handles must be live; label arrays must hold one entry per code row; `out` writable.
 */
enum LpmghStatus lpmgh_map_score(const struct LpmghCodes *queries,
                                 const int64_t *labels_q,
                                 const struct LpmghCodes *db,
                                 const int64_t *labels_db,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LPMGH_H */
