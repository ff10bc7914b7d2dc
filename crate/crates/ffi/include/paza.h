#ifndef PAZA_H
#define PAZA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PazaStatus {
  PAZA_STATUS_OK = 0,
  PAZA_STATUS_NULL_ARGUMENT = 1,
  PAZA_STATUS_INVALID_UTF8 = 2,
  PAZA_STATUS_INVALID_CONFIG = 3,
  PAZA_STATUS_INVALID_EVENT = 4,
  PAZA_STATUS_STALE_EVENT = 5,
  PAZA_STATUS_STORE_ERROR = 6,
  PAZA_STATUS_PARSE_ERROR = 7,
  PAZA_STATUS_INVALID_ARGUMENT = 8,
  PAZA_STATUS_NOT_FOUND = 9,
  PAZA_STATUS_CONFLICT = 10,
  PAZA_STATUS_PANIC = 11,
} PazaStatus;

typedef enum PazaCategory {
  PAZA_CATEGORY_CONFIRMED = 0,
  PAZA_CATEGORY_UNCERTAIN = 1,
  PAZA_CATEGORY_NORMAL = 2,
  PAZA_CATEGORY_SKIPPED = 3,
} PazaCategory;

/**
 * Opaque pipeline handle.
 */
typedef struct PazaPipeline PazaPipeline;

typedef struct PazaVerdict {
  enum PazaCategory category;
  uint8_t confidence;
} PazaVerdict;

/**
 * Ratios are NaN when their denominator is zero.
 */
typedef struct PazaMetrics {
  double precision;
  double recall;
  double specificity;
  double accuracy;
  double f1;
} PazaMetrics;

/**
 * Monthly USD figures. Set `vlm_low`/`vlm_high` to NaN to derive the VLM
 * line from the GPU share.
 */
typedef struct PazaCostParams {
  double gpu_usd_per_hr;
  double hours_per_day;
  double days_per_month;
  uint32_t stores_sharing;
  double db_low;
  double db_high;
  double network_low;
  double network_high;
  double vlm_low;
  double vlm_high;
} PazaCostParams;

typedef struct PazaCost {
  double vlm_per_store;
  double total_low;
  double total_high;
} PazaCost;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *paza_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *paza_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void paza_string_free(char *s);

/**
 * Creates a pipeline.
 *
 * `config_toml` may be NULL for defaults; environment overrides apply
 * either way. With `mock_script_json` set, VLM calls are answered in
 * process by the scripted mock instead of the configured endpoint.
 * `alerts_dir` (nullable) persists alerts there.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
enum PazaStatus paza_pipeline_new(const char *config_toml,
                                  const char *mock_script_json,
                                  const char *alerts_dir,
                                  struct PazaPipeline **out);

/**
 * # Safety
 * `p` must be NULL or a pipeline from [`paza_pipeline_new`], freed once.
 */
void paza_pipeline_free(struct PazaPipeline *p);

/**
 * Ingests one FrameEvent JSON line. `alerts_created` (nullable) receives
 * the number of alerts this frame produced.
 *
 * # Safety
 * `p` must be a live pipeline; `frame_json` NUL-terminated.
 */
enum PazaStatus paza_pipeline_ingest(struct PazaPipeline *p,
                                     const char *frame_json,
                                     uint32_t *alerts_created);

/**
 * Ends the input: drains the retry queue and applies retention.
 *
 * # Safety
 * `p` must be a live pipeline.
 */
enum PazaStatus paza_pipeline_finish(struct PazaPipeline *p);

/**
 * Run report as JSON. Free `out` with [`paza_string_free`].
 *
 * # Safety
 * `p` must be a live pipeline; `out` writable.
 */
enum PazaStatus paza_pipeline_report_json(struct PazaPipeline *p, char **out);

/**
 * Alerts created at or after `since_ms`, as a JSON array.
 *
 * # Safety
 * `p` must be a live pipeline; `out` writable.
 */
enum PazaStatus paza_pipeline_alerts_json(struct PazaPipeline *p, uint64_t since_ms, char **out);

/**
 * Records a review. `decision` is `"confirmed"` or `"dismissed"`; `note`
 * may be NULL.
 *
 * # Safety
 * `p` must be a live pipeline; strings NUL-terminated.
 */
enum PazaStatus paza_pipeline_review(struct PazaPipeline *p,
                                     const char *alert_id,
                                     const char *decision,
                                     const char *note);

/**
 * # Safety
 * `text` NUL-terminated; `out` writable.
 */
enum PazaStatus paza_parse_verdict(const char *text, struct PazaVerdict *out);

/**
 * # Safety
 * `out` writable.
 */
enum PazaStatus paza_confusion_metrics(uint64_t tp,
                                       uint64_t fp,
                                       uint64_t tn,
                                       uint64_t fn_,
                                       struct PazaMetrics *out);

/**
 * # Safety
 * `params` readable; `out` writable.
 */
enum PazaStatus paza_cost_model(const struct PazaCostParams *params, struct PazaCost *out);

/**
 * Monthly VLM call range for a per-hour call range.
 *
 * # Safety
 * `out_low` and `out_high` writable.
 */
enum PazaStatus paza_call_volume(double calls_per_hour_low,
                                 double calls_per_hour_high,
                                 double hours_per_day,
                                 double days,
                                 double *out_low,
                                 double *out_high);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAZA_H */
