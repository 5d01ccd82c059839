#ifndef FAIRGEN_H
#define FAIRGEN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FairgenStatus {
  FAIRGEN_STATUS_OK = 0,
  FAIRGEN_STATUS_NULL_POINTER = 1,
  FAIRGEN_STATUS_INVALID_UTF8 = 2,
  FAIRGEN_STATUS_INVALID_ARGUMENT = 3,
  FAIRGEN_STATUS_TABLE = 4,
  FAIRGEN_STATUS_REMOVAL = 5,
  FAIRGEN_STATUS_AUGMENT = 6,
  FAIRGEN_STATUS_FAIRNESS = 7,
  FAIRGEN_STATUS_PIPELINE = 8,
  FAIRGEN_STATUS_PANIC = 9,
} FairgenStatus;

// Opaque handle to an immutable table.
typedef struct FairgenTable FairgenTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fairgen_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next fairgen call on the same thread.
const char *fairgen_last_error(void);

// Loads a CSV validated against a JSON schema file.
//
// # Safety
// `csv_path` and `schema_path` must be NUL-terminated strings; `out` must be
// writable.
enum FairgenStatus fairgen_table_load(const char *csv_path,
                                      const char *schema_path,
                                      struct FairgenTable **out);

// Releases a table. Null is ignored.
//
// # Safety
// `table` must be null or a handle from this library not yet freed.
void fairgen_table_free(struct FairgenTable *table);

// # Safety
// `table` must be a live handle; `out` must be writable.
enum FairgenStatus fairgen_table_num_rows(const struct FairgenTable *table, size_t *out);

// # Safety
// `table` must be a live handle; `path` a NUL-terminated string.
enum FairgenStatus fairgen_table_write_csv(const struct FairgenTable *table, const char *path);

// K% removal on `protected_column`. Writes the kept rows as a new table and, when
// `removed` is non-null, the number of removed rows.
//
// # Safety
// `table` must be a live handle; `protected_column` a NUL-terminated string; `out`
// writable; `removed` null or writable.
enum FairgenStatus fairgen_kremoval(const struct FairgenTable *table,
                                    const char *protected_column,
                                    double k_percent,
                                    struct FairgenTable **out,
                                    size_t *removed);

// Counterfactual augmentation on `protected_column` with default clustering.
//
// # Safety
// `table` must be a live handle; `protected_column` a NUL-terminated string; `out`
// writable.
enum FairgenStatus fairgen_augment(const struct FairgenTable *table,
                                   const char *protected_column,
                                   double add_percent,
                                   uint64_t seed,
                                   struct FairgenTable **out);

// Fairness report for `predictions` (one byte per row, nonzero =
// favourable) against the table's own labels. `attributes_json` is a JSON
// array of protected column names. The report is written to `report_json`.
//
// # Safety
// `table` must be a live handle; `predictions` must point to `len` bytes;
// `attributes_json` a NUL-terminated string; `report_json` writable.
enum FairgenStatus fairgen_metrics(const struct FairgenTable *table,
                                   const uint8_t *predictions,
                                   size_t len,
                                   const char *attributes_json,
                                   size_t min_support,
                                   char **report_json);

// Runs one pipeline config (JSON text, paths relative to the working
// directory) and writes its run record as JSON.
//
// # Safety
// `config_json` must be a NUL-terminated string; `record_json` writable.
enum FairgenStatus fairgen_run_pipeline(const char *config_json, char **record_json);

// Runs an experiment grid and writes the grid record as JSON. Failed cells
// are part of the record, not an error.
//
// # Safety
// `config_json` must be a NUL-terminated string; `record_json` writable.
enum FairgenStatus fairgen_run_grid(const char *config_json, char **record_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void fairgen_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRGEN_H */
