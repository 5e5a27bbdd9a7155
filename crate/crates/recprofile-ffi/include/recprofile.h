#ifndef RECPROFILE_H
#define RECPROFILE_H

/* Generated by cbindgen from recprofile-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Anything but `Ok` leaves a message for
 * [`rp_last_error`].
 */
typedef enum {
  RP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RP_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RP_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument or configuration value was rejected.
   */
  RP_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Configuration or input text failed to parse.
   */
  RP_STATUS_PARSE_ERROR = 4,
  /**
   * A file could not be read or written.
   */
  RP_STATUS_IO_ERROR = 5,
  /**
   * A named artifact, key or attribute does not exist.
   */
  RP_STATUS_MISSING = 6,
  /**
   * The pipeline itself failed (training, degenerate data, ...).
   */
  RP_STATUS_FAILED = 7,
  /**
   * A panic was caught at the boundary; state may be inconsistent.
   */
  RP_STATUS_PANIC = 8,
} RpStatus;

/**
 * In-memory interaction dataset. Opaque: create through
 * [`rp_dataset_synth`] or [`rp_dataset_open`], release with
 * [`rp_dataset_free`].
 */
typedef struct RpDataset RpDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The library version as a static string; never freed by the caller.
 */
const char *rp_version(void);

/**
 * The message from the most recent failing call on this thread, empty when
 * nothing failed yet. The pointer stays valid until the next API call on
 * the same thread; do not free it.
 */
const char *rp_last_error(void);

/**
 * Releases a string produced by any `char **` out-parameter of this API.
 * Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer previously handed out by this library and
 * not yet freed.
 */
void rp_string_free(char *s);

/**
 * Generates a synthetic clustered dataset: users and items both split into
 * `n_clusters` groups, each interaction staying inside the user's own
 * cluster with probability `cluster_affinity`, and the cluster planted as
 * the named user attribute.
 *
 * # Safety
 * `attribute` must be a NUL-terminated string and `out` valid for writes.
 */
RpStatus rp_dataset_synth(uint64_t n_users,
                          uint64_t n_items,
                          uint64_t n_clusters,
                          double cluster_affinity,
                          uint64_t interactions_per_user,
                          const char *attribute,
                          uint64_t seed,
                          RpDataset **out);

/**
 * Opens a dataset directory written by [`rp_dataset_save`] (or the
 * command-line `ingest`/`synth` stages).
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` valid for writes.
 */
RpStatus rp_dataset_open(const char *dir, RpDataset **out);

/**
 * Writes the dataset as a directory of plain text files that
 * [`rp_dataset_open`] (and the command-line tool) can read back.
 *
 * # Safety
 * `dataset` must be a live handle and `dir` a NUL-terminated string.
 */
RpStatus rp_dataset_save(const RpDataset *dataset, const char *dir);

/**
 * Releases a dataset handle. Null is ignored.
 *
 * # Safety
 * `dataset` must be null or a live handle from this library, not yet freed.
 */
void rp_dataset_free(RpDataset *dataset);

/**
 * Number of users; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
uint64_t rp_dataset_n_users(const RpDataset *dataset);

/**
 * Number of items; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
uint64_t rp_dataset_n_items(const RpDataset *dataset);

/**
 * Number of stored interactions; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
uint64_t rp_dataset_n_interactions(const RpDataset *dataset);

/**
 * Describes the dataset as JSON: sizes, interaction density, and each
 * declared attribute with its label set.
 *
 * # Safety
 * `dataset` must be a live handle and `out_json` valid for writes; free the
 * result with [`rp_string_free`].
 */
RpStatus rp_dataset_summary_json(const RpDataset *dataset, char **out_json);

/**
 * Runs one analyst scenario against the dataset and returns the report as
 * JSON: metrics, per-user predictions with decoded labels, the surrogate
 * tournament and alignment residuals when those stages ran.
 *
 * `config` uses the flat `key = value` dialect of the command-line tool and
 * must set at least `scenario` and `attribute`. `cache_dir` may be null;
 * when given, trained original models are reused across calls.
 *
 * # Safety
 * `dataset` must be a live handle, `config` a NUL-terminated string,
 * `cache_dir` null or a NUL-terminated string, and `out_json` valid for
 * writes; free the result with [`rp_string_free`].
 */
RpStatus rp_scenario_run(const RpDataset *dataset,
                         const char *config,
                         const char *cache_dir,
                         char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECPROFILE_H */
