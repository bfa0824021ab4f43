#ifndef SUPERDIFF_H
#define SUPERDIFF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. The first four coincide with the CLI exit codes.
 */
typedef enum SdStatus {
  SD_STATUS_OK = 0,
  SD_STATUS_INTERNAL = 1,
  SD_STATUS_VALIDATION = 2,
  SD_STATUS_INCONCLUSIVE = 3,
  SD_STATUS_NULL_POINTER = 4,
  SD_STATUS_INVALID_UTF8 = 5,
  SD_STATUS_PANIC = 6,
} SdStatus;

/**
 * A parsed, validated campaign configuration.
 */
typedef struct SdConfig SdConfig;

/**
 * A finished run persisted on disk.
 */
typedef struct SdRun SdRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into this library on the same thread.
 */
const char *sd_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *sd_version(void);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sd_string_free(char *s);

/**
 * Parse a JSON campaign configuration.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SdStatus sd_config_parse(const char *json, struct SdConfig **out);

/**
 * Default configuration for an experiment kind (e.g. "fk", "bbm").
 *
 * # Safety
 * `kind` must be a NUL-terminated string; `out` must be writable.
 */
enum SdStatus sd_config_template(const char *kind, struct SdConfig **out);

/**
 * Canonical JSON of the configuration; free with `sd_string_free`.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum SdStatus sd_config_to_json(const struct SdConfig *cfg, char **out);

/**
 * Hex SHA-256 digest identifying the run; free with `sd_string_free`.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum SdStatus sd_config_digest(const struct SdConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must come from `sd_config_parse`/`sd_config_template` and not have
 * been freed. NULL is ignored.
 */
void sd_config_free(struct SdConfig *cfg);

/**
 * Execute the campaign and write its outputs under `output_root` (NULL
 * means the default root). On success `*out` holds the run; its status may
 * still be `SD_STATUS_INCONCLUSIVE`, which is also returned.
 *
 * # Safety
 * `cfg` must be a live handle; `output_root` NULL or NUL-terminated; `out`
 * writable.
 */
enum SdStatus sd_run(const struct SdConfig *cfg, const char *output_root_dir, struct SdRun **out);

/**
 * # Safety
 * `run` must be a live handle or NULL (gives `SD_STATUS_NULL_POINTER`).
 */
enum SdStatus sd_run_status(const struct SdRun *run);

/**
 * Output directory; borrowed from the handle.
 *
 * # Safety
 * `run` must be a live handle or NULL.
 */
const char *sd_run_directory(const struct SdRun *run);

/**
 * Config digest stamped into every output; borrowed from the handle.
 *
 * # Safety
 * `run` must be a live handle or NULL.
 */
const char *sd_run_digest(const struct SdRun *run);

/**
 * # Safety
 * `run` must come from `sd_run` and not have been freed. NULL is ignored.
 */
void sd_run_free(struct SdRun *run);

/**
 * Upper bound on P(Poisson(λ) ≥ kλ) (k > 1) or P(Poisson(λ) ≤ kλ) (k < 1).
 *
 * # Safety
 * `out` must be writable.
 */
enum SdStatus sd_poisson_tail_bound(double lambda, double k, double *out);

/**
 * The exact tail that `sd_poisson_tail_bound` bounds.
 */
double sd_poisson_tail_exact(double lambda, double k);

/**
 * Run one acceptance criterion (1–15). `full` selects the full-size
 * instance. `*pass` receives 1 or 0; `*line` (if not NULL) the report line,
 * to be freed with `sd_string_free`.
 *
 * # Safety
 * `pass` must be writable; `line` NULL or writable.
 */
enum SdStatus sd_verify_criterion(uint8_t id, int full, int *pass, char **line);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUPERDIFF_H */
