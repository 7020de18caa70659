#ifndef FLOQUET_NESS_H
#define FLOQUET_NESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call. Values 2 to 4 match the CLI exit codes.
 */
typedef enum FnsStatus {
  FNS_STATUS_OK = 0,
  /**
   * Invalid model, truncation, configuration, level index or β.
   */
  FNS_STATUS_INVALID_INPUT = 2,
  /**
   * Linear algebra or I/O failure.
   */
  FNS_STATUS_NUMERICAL = 3,
  /**
   * Ill-conditioned solve, route mismatch or unstable limit.
   */
  FNS_STATUS_CONVERGENCE = 4,
  FNS_STATUS_NULL_POINTER = 10,
  /**
   * An output buffer has the wrong length.
   */
  FNS_STATUS_BUFFER_SIZE = 11,
  /**
   * A Rust panic was caught at the boundary.
   */
  FNS_STATUS_PANIC = 12,
} FnsStatus;

/**
 * Scattering samples for every incoming level; yields rates at any β.
 */
typedef struct FnsEngine FnsEngine;

/**
 * Validated model with its Floquet coupling matrix.
 */
typedef struct FnsModel FnsModel;

/**
 * Floquet rates at one β.
 */
typedef struct FnsRateTable FnsRateTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fns_version(void);

/**
 * Message for the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next `fns_*` call on the same thread.
 */
const char *fns_last_error_message(void);

/**
 * Builds the driven three-level toy model at drive strength `lambda`.
 * Zero `nu_cut`, `e_cut` or `quad_points` keep the default truncation value.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum FnsStatus fns_model_toy(double lambda,
                             uint32_t nu_cut,
                             double e_cut,
                             size_t quad_points,
                             struct FnsModel **out);

/**
 * Builds a model from the `[system]` and `[truncation]` sections of a TOML
 * run configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated UTF-8 string; `out` must be valid for writes.
 */
enum FnsStatus fns_model_from_toml(const char *toml, struct FnsModel **out);

/**
 * # Safety
 * `model` must be NULL or a live handle from this library.
 */
void fns_model_free(struct FnsModel *model);

/**
 * Number of internal levels, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t fns_model_n_levels(const struct FnsModel *model);

/**
 * `E_2 − E_1`, the unit of the CLI's β values.
 *
 * # Safety
 * `model` must be a live handle; `out` must be valid for writes.
 */
enum FnsStatus fns_model_level_gap(const struct FnsModel *model, double *out);

/**
 * Solves the scattering problem on every quadrature node. This is the
 * expensive step; the engine then produces tables at any β cheaply.
 *
 * # Safety
 * `model` must be a live handle; `out` must be valid for writes.
 */
enum FnsStatus fns_engine_new(const struct FnsModel *model, struct FnsEngine **out);

/**
 * # Safety
 * `engine` must be NULL or a live handle.
 */
void fns_engine_free(struct FnsEngine *engine);

/**
 * Rate from `(j, 0)` into `(jp, nu)` at inverse temperature `beta`.
 *
 * # Safety
 * `engine` must be a live handle; `out` must be valid for writes.
 */
enum FnsStatus fns_engine_rate(const struct FnsEngine *engine,
                               size_t jp,
                               size_t j,
                               int32_t nu,
                               double beta,
                               double *out);

/**
 * # Safety
 * `engine` must be a live handle; `out` must be valid for writes.
 */
enum FnsStatus fns_engine_table(const struct FnsEngine *engine,
                                double beta,
                                struct FnsRateTable **out);

/**
 * # Safety
 * `table` must be NULL or a live handle.
 */
void fns_table_free(struct FnsRateTable *table);

/**
 * β of the table, or NaN for a NULL handle.
 *
 * # Safety
 * `table` must be NULL or a live handle.
 */
double fns_table_beta(const struct FnsRateTable *table);

/**
 * # Safety
 * `table` must be NULL or a live handle.
 */
size_t fns_table_n_levels(const struct FnsRateTable *table);

/**
 * # Safety
 * `table` must be NULL or a live handle.
 */
uint32_t fns_table_nu_cut(const struct FnsRateTable *table);

/**
 * Per-sideband rate; zero for `|nu|` beyond the truncation.
 *
 * # Safety
 * `table` must be a live handle; `out` must be valid for writes.
 */
enum FnsStatus fns_table_rate(const struct FnsRateTable *table,
                              size_t jp,
                              size_t j,
                              int32_t nu,
                              double *out);

/**
 * Sum of the rates from `j` into `jp` over all sidebands.
 *
 * # Safety
 * `table` must be a live handle; `out` must be valid for writes.
 */
enum FnsStatus fns_table_total(const struct FnsRateTable *table, size_t jp, size_t j, double *out);

/**
 * Steady-state populations, written to `out[0..len]`; `len` must equal the
 * number of levels.
 *
 * # Safety
 * `table` must be a live handle; `out` must be valid for `len` writes.
 */
enum FnsStatus fns_table_ness(const struct FnsRateTable *table, double *out, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOQUET_NESS_H */
