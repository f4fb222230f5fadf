#ifndef TELECHAIN_H
#define TELECHAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_INVALID_UTF8 = 2,
  TC_STATUS_INVALID_ARGUMENT = 3,
  TC_STATUS_IO = 4,
  TC_STATUS_PARSE = 5,
  TC_STATUS_ZERO_VARIANCE = 6,
  TC_STATUS_PANIC = 7,
} TcStatus;

// Set of normalized artifact labels.
typedef struct TcArtifactSet TcArtifactSet;

// Token embedding table.
typedef struct TcEmbeddingTable TcEmbeddingTable;

typedef struct TcChainScores {
  // Length of the satisfied prefix.
  uint32_t k;
  double requirement_satisfaction;
  double cohesion;
  double diversity;
  double creativity;
} TcChainScores;

typedef struct TcTTestResult {
  double t_stat;
  uint32_t df;
  double p_two_sided;
  double mean_a;
  double mean_b;
} TcTTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *tc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *tc_version(void);

// Loads a table file (`<count> <dim>` header, then one token per line).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum TcStatus tc_embedding_table_load(const char *path, struct TcEmbeddingTable **out);

// Parses a table from text in the file format.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
enum TcStatus tc_embedding_table_parse(const char *text, struct TcEmbeddingTable **out);

// # Safety
// `table` must come from this library and not be used afterwards. Null is ignored.
void tc_embedding_table_free(struct TcEmbeddingTable *table);

// Vector dimension, or 0 for a null table.
//
// # Safety
// `table` must be null or a live handle.
size_t tc_embedding_table_dimension(const struct TcEmbeddingTable *table);

// θ between two labels: clamped cosine of their embeddings.
//
// # Safety
// `table` must be a live handle, `a` and `b` NUL-terminated strings and `out` writable.
enum TcStatus tc_label_similarity(const struct TcEmbeddingTable *table,
                                  const char *a,
                                  const char *b,
                                  double *out);

// New empty artifact set; never null.
struct TcArtifactSet *tc_artifact_set_new(void);

// Normalizes and inserts a label.
//
// # Safety
// `set` must be a live handle and `label` a NUL-terminated string.
enum TcStatus tc_artifact_set_insert(struct TcArtifactSet *set, const char *label);

// Number of distinct labels, or 0 for a null set.
//
// # Safety
// `set` must be null or a live handle.
size_t tc_artifact_set_len(const struct TcArtifactSet *set);

// # Safety
// `set` must come from this library and not be used afterwards. Null is ignored.
void tc_artifact_set_free(struct TcArtifactSet *set);

// Scores a chain of `step_count` artifact sets against `seed`, with `l`
// the configured chain length and `threshold` the match threshold.
//
// # Safety
// `steps` must point to `step_count` live set handles (it may be null when
// `step_count` is 0); the other pointers must be live and `out` writable.
enum TcStatus tc_score_chain(const struct TcEmbeddingTable *table,
                             const struct TcArtifactSet *seed,
                             const struct TcArtifactSet *const *steps,
                             size_t step_count,
                             uint32_t l,
                             double threshold,
                             struct TcChainScores *out);

// `rs · (cohesion + diversity) / 2`.
double tc_creativity_ranking(double rs, double cohesion, double diversity);

// Paired t-test of `a` against `b`, both of length `n`.
//
// # Safety
// `a` and `b` must point to `n` doubles and `out` must be writable.
enum TcStatus tc_paired_t_test(const double *a,
                               const double *b,
                               size_t n,
                               struct TcTTestResult *out);

// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom.
double tc_student_t_two_sided_p(double t, uint32_t df);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TELECHAIN_H */
