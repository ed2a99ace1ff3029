#ifndef SETTLEBENCH_H
#define SETTLEBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_POINTER = 1,
  SB_STATUS_INVALID_ARGUMENT = 2,
  SB_STATUS_IO = 3,
  SB_STATUS_PARSE = 4,
  SB_STATUS_NOT_FOUND = 5,
  SB_STATUS_RUNTIME = 6,
  SB_STATUS_PANIC = 7,
} SbStatus;

/**
 * Evaluator driving player 0 in [`sb_experiment_run`].
 */
typedef enum SbEvaluator {
  SB_EVALUATOR_RULE_BASE = 0,
  SB_EVALUATOR_RANDOM = 1,
} SbEvaluator;

typedef struct SbKnowledgeBase SbKnowledgeBase;

typedef struct SbMap SbMap;

typedef struct SbMetrics SbMetrics;

typedef struct SbMlp SbMlp;

typedef struct SbValueTable SbValueTable;

/**
 * The six point kinds a city produces in one turn.
 */
typedef struct SbOutputPoints {
  uint64_t gold;
  uint64_t luxury;
  uint64_t science;
  uint64_t food;
  uint64_t production;
  uint64_t trade;
} SbOutputPoints;

typedef struct SbExperimentParams {
  enum SbEvaluator evaluator;
  uint32_t episodes;
  uint32_t turns;
  uint64_t map_seed;
  uint64_t seed;
  /**
   * Zero plays every episode on the map from `map_seed`; non-zero
   * generates a map per episode.
   */
  uint8_t per_episode_maps;
  double epsilon;
  /**
   * Output directory for logs and metrics; may be null.
   */
  const char *out_dir;
} SbExperimentParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *sb_last_error_message(void);

void sb_string_free(char *s);

enum SbStatus sb_map_generate(uint32_t width,
                              uint32_t height,
                              uint64_t seed,
                              struct SbMap **out_map);

enum SbStatus sb_map_from_text(const char *text, struct SbMap **out_map);

/**
 * Writes a newly allocated string; free it with `sb_string_free`.
 */
enum SbStatus sb_map_to_text(const struct SbMap *map, char **out_text);

enum SbStatus sb_map_size(const struct SbMap *map, uint32_t *out_width, uint32_t *out_height);

enum SbStatus sb_map_buildable_fraction(const struct SbMap *map, double *out_fraction);

void sb_map_free(struct SbMap *map);

enum SbStatus sb_kb_default(struct SbKnowledgeBase **out_kb);

enum SbStatus sb_kb_from_text(const char *text, struct SbKnowledgeBase **out_kb);

enum SbStatus sb_kb_to_text(const struct SbKnowledgeBase *kb, char **out_text);

enum SbStatus sb_kb_rule_count(const struct SbKnowledgeBase *kb, size_t *out_count);

/**
 * Score of the cluster centered at `(x, y)` taking the highest alternative
 * of every fired family.
 */
enum SbStatus sb_kb_score_max(const struct SbKnowledgeBase *kb,
                              const struct SbMap *map,
                              int32_t x,
                              int32_t y,
                              int64_t *out_score);

void sb_kb_free(struct SbKnowledgeBase *kb);

enum SbStatus sb_value_table_load(const char *path, struct SbValueTable **out_table);

/**
 * Number of stored action values.
 */
enum SbStatus sb_value_table_len(const struct SbValueTable *table, size_t *out_len);

/**
 * Mean reward and visit count of one rule in one state; `NotFound` if the
 * rule was never chosen there.
 */
enum SbStatus sb_value_table_q(const struct SbValueTable *table,
                               size_t state,
                               size_t family,
                               size_t rule,
                               double *out_mean,
                               uint64_t *out_count);

void sb_value_table_free(struct SbValueTable *table);

enum SbStatus sb_mlp_load(const char *path, struct SbMlp **out_model);

/**
 * Predicted label for a raw (unnormalized) feature vector.
 */
enum SbStatus sb_mlp_predict(const struct SbMlp *model,
                             const double *features,
                             size_t len,
                             double *out_value);

void sb_mlp_free(struct SbMlp *model);

/**
 * `gold + luxury + science + food + 2 * production + trade`
 */
enum SbStatus sb_city_output(const struct SbOutputPoints *points, uint64_t *out_weight);

/**
 * Runs a training experiment and returns its per-episode metrics.
 */
enum SbStatus sb_experiment_run(const struct SbExperimentParams *params,
                                struct SbMetrics **out_metrics);

enum SbStatus sb_metrics_len(const struct SbMetrics *metrics, size_t *out_len);

enum SbStatus sb_metrics_tgo(const struct SbMetrics *metrics, size_t episode, uint64_t *out_tgo);

/**
 * Relative change between the first and last `window` share of episodes.
 */
enum SbStatus sb_metrics_improvement(const struct SbMetrics *metrics,
                                     double window,
                                     double *out_improvement);

void sb_metrics_free(struct SbMetrics *metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SETTLEBENCH_H */
