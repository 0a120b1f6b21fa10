#ifndef NCR_H
#define NCR_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. The non-zero values match the `ncr` command's exit codes.
 */
typedef enum NcrStatus {
  NCR_STATUS_OK = 0,
  /**
   * Bad argument or null pointer.
   */
  NCR_STATUS_USAGE = 1,
  /**
   * Malformed input, I/O failure or inconsistent data.
   */
  NCR_STATUS_DATA = 2,
  /**
   * Rank deficiency or divergence.
   */
  NCR_STATUS_NUMERIC = 3,
  /**
   * A panic was caught at the boundary.
   */
  NCR_STATUS_INTERNAL = 4,
} NcrStatus;

typedef enum NcrApVariant {
  NCR_AP_VARIANT_RECTANGULAR = 0,
  NCR_AP_VARIANT_TRAPEZOIDAL = 1,
} NcrApVariant;

typedef enum NcrOkPolicy {
  NCR_OK_POLICY_POSITIVE = 0,
  NCR_OK_POLICY_JUNK = 1,
} NcrOkPolicy;

typedef struct NcrDescriptors NcrDescriptors;

typedef struct NcrIndex NcrIndex;

typedef struct NcrPca NcrPca;

typedef struct NcrProjection NcrProjection;

/**
 * Training hyper-parameters. Start from `ncr_train_config_default()`.
 */
typedef struct NcrTrainConfig {
  size_t dim;
  double tau_pos;
  double tau_neg;
  double eta0;
  double decay;
  size_t epochs;
  size_t batch_size;
  uint64_t seed;
} NcrTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ncr_last_error(void);

/**
 * Reads a descriptor file and its id list.
 */
enum NcrStatus ncr_descriptors_read(const char *path_ncd,
                                    const char *path_ids,
                                    struct NcrDescriptors **out);

enum NcrStatus ncr_descriptors_write(const struct NcrDescriptors *set,
                                     const char *path_ncd,
                                     const char *path_ids);

/**
 * Builds a set from `n` row-major rows of length `dim` and `n` ids.
 */
enum NcrStatus ncr_descriptors_from_rows(const double *data,
                                         size_t n,
                                         size_t dim,
                                         const char *const *ids,
                                         struct NcrDescriptors **out);

size_t ncr_descriptors_len(const struct NcrDescriptors *set);

size_t ncr_descriptors_dim(const struct NcrDescriptors *set);

/**
 * Id of row `i`, owned by the set. Null when out of range.
 */
const char *ncr_descriptors_id(const struct NcrDescriptors *set, size_t i);

/**
 * Copies row `i` into `out`, which must hold `dim` values.
 */
enum NcrStatus ncr_descriptors_row(const struct NcrDescriptors *set, size_t i, double *out);

/**
 * New set with every row scaled to unit length.
 */
enum NcrStatus ncr_descriptors_normalize(const struct NcrDescriptors *set,
                                         struct NcrDescriptors **out);

void ncr_descriptors_free(struct NcrDescriptors *set);

enum NcrStatus ncr_pca_fit(const struct NcrDescriptors *set,
                           size_t dim,
                           uint64_t seed,
                           size_t sample_cap,
                           bool strict_rank,
                           struct NcrPca **out);

enum NcrStatus ncr_pca_apply(const struct NcrPca *model,
                             const struct NcrDescriptors *set,
                             bool renormalize,
                             bool whiten,
                             struct NcrDescriptors **out);

enum NcrStatus ncr_pca_read(const char *path_ncp, struct NcrPca **out);

enum NcrStatus ncr_pca_write(const struct NcrPca *model, const char *path_ncp);

size_t ncr_pca_input_dim(const struct NcrPca *model);

size_t ncr_pca_output_dim(const struct NcrPca *model);

/**
 * Copies the `output_dim` eigenvalues, largest first, into `out`.
 */
enum NcrStatus ncr_pca_eigenvalues(const struct NcrPca *model, double *out);

void ncr_pca_free(struct NcrPca *model);

struct NcrTrainConfig ncr_train_config_default(void);

/**
 * Trains a projection on `set` from a labelled pair file.
 */
enum NcrStatus ncr_projection_fit(const struct NcrDescriptors *set,
                                  const char *path_pairs,
                                  const struct NcrTrainConfig *config,
                                  struct NcrProjection **out);

enum NcrStatus ncr_projection_read(const char *path_ncw, struct NcrProjection **out);

enum NcrStatus ncr_projection_write(const struct NcrProjection *model, const char *path_ncw);

enum NcrStatus ncr_projection_apply(const struct NcrProjection *model,
                                    const struct NcrDescriptors *set,
                                    bool renormalize,
                                    struct NcrDescriptors **out);

size_t ncr_projection_input_dim(const struct NcrProjection *model);

size_t ncr_projection_output_dim(const struct NcrProjection *model);

void ncr_projection_free(struct NcrProjection *model);

/**
 * Builds a search index over a copy of `set`. With `normalize` the rows
 * (and later the queries) are L2-normalized first.
 */
enum NcrStatus ncr_index_build(const struct NcrDescriptors *set,
                               bool normalize,
                               struct NcrIndex **out);

size_t ncr_index_len(const struct NcrIndex *index);

/**
 * Id of database row `row`, owned by the index. Null when out of range.
 */
const char *ncr_index_id(const struct NcrIndex *index, size_t row);

/**
 * k nearest rows to `query` (length `dim`). `exclude_id` may be null.
 * Writes up to `k` row numbers and distances and the count actually found.
 */
enum NcrStatus ncr_index_query(const struct NcrIndex *index,
                               const double *query,
                               size_t dim,
                               size_t k,
                               const char *exclude_id,
                               size_t *out_rows,
                               double *out_distances,
                               size_t *out_count);

void ncr_index_free(struct NcrIndex *index);

/**
 * Holidays-style mAP: one query per group, left out of its own ranking.
 */
enum NcrStatus ncr_eval_holidays(const struct NcrIndex *index,
                                 const char *path_gt,
                                 enum NcrApVariant variant,
                                 double *out_map);

/**
 * UKB score: mean count of group members among the top four.
 */
enum NcrStatus ncr_eval_ukb(const struct NcrIndex *index, const char *path_gt, double *out_score);

/**
 * Oxford-style mAP of external `queries` against the index.
 */
enum NcrStatus ncr_eval_oxford(const struct NcrIndex *index,
                               const struct NcrDescriptors *queries,
                               const char *path_gt,
                               enum NcrOkPolicy ok_policy,
                               enum NcrApVariant variant,
                               double *out_map);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NCR_H */
