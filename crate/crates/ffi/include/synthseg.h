#ifndef SYNTHSEG_H
#define SYNTHSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SynthsegStatus {
  SYNTHSEG_STATUS_OK = 0,
  SYNTHSEG_STATUS_NULL_POINTER = 1,
  SYNTHSEG_STATUS_INVALID_ARGUMENT = 2,
  SYNTHSEG_STATUS_UNKNOWN_CLASS = 3,
  SYNTHSEG_STATUS_DECODE = 4,
  SYNTHSEG_STATUS_ENCODE = 5,
  SYNTHSEG_STATUS_NUMERICAL = 6,
  SYNTHSEG_STATUS_IO = 7,
  SYNTHSEG_STATUS_BACKEND = 8,
  SYNTHSEG_STATUS_PIPELINE = 9,
  SYNTHSEG_STATUS_PANIC = 10,
} SynthsegStatus;

/**
 * Batch plan handle; slots refer to records by their input index.
 */
typedef struct SynthsegBatchPlan SynthsegBatchPlan;

/**
 * Gaussian feature statistics handle.
 */
typedef struct SynthsegFeatureStats SynthsegFeatureStats;

/**
 * Class taxonomy handle.
 */
typedef struct SynthsegTaxonomy SynthsegTaxonomy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next library call on the same thread.
 */
const char *synthseg_last_error(void);

/**
 * Library version as a static string.
 */
const char *synthseg_version(void);

void synthseg_string_free(char *s);

void synthseg_bytes_free(uint8_t *data, size_t len);

/**
 * The built-in PASCAL VOC taxonomy (20 classes).
 */
struct SynthsegTaxonomy *synthseg_taxonomy_voc(void);

enum SynthsegStatus synthseg_taxonomy_from_json(const char *json, struct SynthsegTaxonomy **out);

void synthseg_taxonomy_free(struct SynthsegTaxonomy *taxonomy);

/**
 * Number of classes, background excluded; 0 for NULL.
 */
size_t synthseg_taxonomy_len(const struct SynthsegTaxonomy *taxonomy);

/**
 * Resolves a class name or alias to its id.
 */
enum SynthsegStatus synthseg_canonicalize(const struct SynthsegTaxonomy *taxonomy,
                                          const char *name,
                                          uint8_t *out_id);

/**
 * Caption plus class names. The result is freed with `synthseg_string_free`.
 */
enum SynthsegStatus synthseg_compose_prompt(const struct SynthsegTaxonomy *taxonomy,
                                            const char *caption,
                                            const uint8_t *class_ids,
                                            size_t num_classes,
                                            char **out);

/**
 * Encodes a `width * height` label map as a palette PNG.
 */
enum SynthsegStatus synthseg_mask_encode(const struct SynthsegTaxonomy *taxonomy,
                                         uint32_t width,
                                         uint32_t height,
                                         const uint8_t *labels,
                                         uint8_t **out_data,
                                         size_t *out_len);

/**
 * Decodes a palette PNG; the label buffer holds `width * height` bytes and
 * is freed with `synthseg_bytes_free`.
 */
enum SynthsegStatus synthseg_mask_decode(const uint8_t *png,
                                         size_t png_len,
                                         uint32_t *out_width,
                                         uint32_t *out_height,
                                         uint8_t **out_labels);

/**
 * Mean IoU over classes present in either map; pixels where either map
 * equals `ignore_index` are skipped.
 */
enum SynthsegStatus synthseg_miou(const uint8_t *pred,
                                  const uint8_t *gt,
                                  uint32_t width,
                                  uint32_t height,
                                  size_t num_classes,
                                  uint8_t ignore_index,
                                  double *out);

enum SynthsegStatus synthseg_pixel_accuracy(const uint8_t *pred,
                                            const uint8_t *gt,
                                            uint32_t width,
                                            uint32_t height,
                                            uint8_t ignore_index,
                                            double *out);

/**
 * Mean and covariance of `count` row-major vectors of length `dim`.
 */
enum SynthsegStatus synthseg_feature_stats_new(const double *vectors,
                                               size_t count,
                                               size_t dim,
                                               struct SynthsegFeatureStats **out);

void synthseg_feature_stats_free(struct SynthsegFeatureStats *stats);

enum SynthsegStatus synthseg_fid(const struct SynthsegFeatureStats *a,
                                 const struct SynthsegFeatureStats *b,
                                 double *out);

/**
 * Inception score over `count` rows of `classes` probabilities.
 */
enum SynthsegStatus synthseg_inception_score(const double *probs,
                                             size_t count,
                                             size_t classes,
                                             size_t splits,
                                             double *out_mean,
                                             double *out_std);

enum SynthsegStatus synthseg_cosine(const double *u, const double *v, size_t dim, double *out);

/**
 * Contiguous equal folds; `out_fold_of[i]` receives the fold of `class_ids[i]`.
 */
enum SynthsegStatus synthseg_split_folds(const uint8_t *class_ids,
                                         size_t count,
                                         size_t num_folds,
                                         size_t *out_fold_of);

/**
 * Plans batches over `num_records` records. Record `r` has
 * `kept_counts[r]` kept variant indices, stored consecutively in `kept`.
 */
enum SynthsegStatus synthseg_plan_new(const char *const *record_ids,
                                      size_t num_records,
                                      const uint32_t *kept,
                                      const size_t *kept_counts,
                                      double alpha,
                                      size_t batch_size,
                                      size_t num_batches,
                                      uint64_t seed,
                                      struct SynthsegBatchPlan **out);

void synthseg_plan_free(struct SynthsegBatchPlan *plan);

/**
 * Total slots; 0 for NULL.
 */
size_t synthseg_plan_len(const struct SynthsegBatchPlan *plan);

double synthseg_plan_synthetic_fraction(const struct SynthsegBatchPlan *plan);

/**
 * Slot `slot` in batch-major order. `out_j` is -1 for a real slot.
 */
enum SynthsegStatus synthseg_plan_slot(const struct SynthsegBatchPlan *plan,
                                       size_t slot,
                                       size_t *out_record,
                                       int64_t *out_j);

/**
 * JSONL form of the plan, freed with `synthseg_string_free`.
 */
enum SynthsegStatus synthseg_plan_to_jsonl(const struct SynthsegBatchPlan *plan, char **out);

/**
 * Runs the full pipeline described by a config file. On success `out_report`
 * (if not NULL) receives the run report as JSON.
 */
enum SynthsegStatus synthseg_run_pipeline(const char *config_path, char **out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYNTHSEG_H */
