#ifndef SEMEXPAND_H
#define SEMEXPAND_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SeStatus {
  SE_STATUS_OK = 0,
  SE_STATUS_NULL_POINTER = 1,
  SE_STATUS_INVALID_UTF8 = 2,
  SE_STATUS_INVALID_ARGUMENT = 3,
  SE_STATUS_DATA_ERROR = 4,
  SE_STATUS_UNKNOWN_MARKET = 5,
  SE_STATUS_VERSION_REGRESSION = 6,
  SE_STATUS_NO_SNAPSHOT = 7,
  SE_STATUS_BUFFER_TOO_SMALL = 8,
  SE_STATUS_INTERNAL = 9,
} SeStatus;

/**
 * A swappable snapshot reference shared by readers and one writer.
 */
typedef struct SeHolder SeHolder;

/**
 * An immutable snapshot.
 */
typedef struct SeSnapshot SeSnapshot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *se_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void se_string_free(char *s);

/**
 * Loads and validates a snapshot directory.
 *
 * # Safety
 * `dir` must be a nul-terminated string; `out` must be writable.
 */
enum SeStatus se_snapshot_load(const char *dir, struct SeSnapshot **out);

/**
 * # Safety
 * `snap` must come from `se_snapshot_load` and not have been freed.
 */
void se_snapshot_free(struct SeSnapshot *snap);

/**
 * Version of a snapshot, or 0 for null.
 *
 * # Safety
 * `snap` must be null or a live handle.
 */
uint64_t se_snapshot_version(const struct SeSnapshot *snap);

/**
 * Matches `query` in `market`; writes a JSON array of match records.
 *
 * # Safety
 * Pointers must be valid; `out` receives a string for `se_string_free`.
 */
enum SeStatus se_match_query(const struct SeSnapshot *snap,
                             const char *query,
                             const char *market,
                             char **out_json);

/**
 * Expands `keyword` in `market`; writes one expansion record as JSON.
 *
 * # Safety
 * Pointers must be valid; `out` receives a string for `se_string_free`.
 */
enum SeStatus se_expand_keyword(const struct SeSnapshot *snap,
                                const char *keyword,
                                const char *market,
                                char **out_json);

struct SeHolder *se_holder_new(void);

/**
 * # Safety
 * `h` must come from `se_holder_new` and not have been freed.
 */
void se_holder_free(struct SeHolder *h);

/**
 * Current version, or 0 when nothing is installed.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
uint64_t se_holder_version(const struct SeHolder *h);

/**
 * Loads `dir` and swaps it in. `out_previous` (nullable) receives the
 * replaced version, 0 if none.
 *
 * # Safety
 * `h` must be a live handle and `dir` a nul-terminated string.
 */
enum SeStatus se_holder_refresh(const struct SeHolder *h, const char *dir, uint64_t *out_previous);

/**
 * Matches against the holder's current snapshot. `out_version`
 * (nullable) receives the version that produced the result.
 *
 * # Safety
 * Pointers must be valid; `out_json` receives a string for `se_string_free`.
 */
enum SeStatus se_holder_match(const struct SeHolder *h,
                              const char *query,
                              const char *market,
                              char **out_json,
                              uint64_t *out_version);

/**
 * Writes the `dim`-dimensional fallback embedding of `text` into `out`,
 * which must hold at least `dim` floats.
 *
 * # Safety
 * `out` must point to `out_len` writable floats.
 */
enum SeStatus se_fallback_embed(const char *text, size_t dim, float *out, size_t out_len);

/**
 * Linearly interpolated p-quantile of `n` values.
 *
 * # Safety
 * `values` must point to `n` readable doubles; `out` must be writable.
 */
enum SeStatus se_quantile(const double *values, size_t n, double p, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMEXPAND_H */
