#ifndef DEBSE_H
#define DEBSE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum DebseStatus {
  DEBSE_STATUS_OK = 0,
  DEBSE_STATUS_NULL_POINTER = 1,
  DEBSE_STATUS_INVALID_UTF8 = 2,
  DEBSE_STATUS_INVALID_ARGUMENT = 3,
  DEBSE_STATUS_CONFIG = 4,
  DEBSE_STATUS_PARSE = 5,
  DEBSE_STATUS_DIMENSION = 6,
  DEBSE_STATUS_SOLVER = 7,
  DEBSE_STATUS_NUMERICAL = 8,
  DEBSE_STATUS_IO = 9,
  DEBSE_STATUS_INTERNAL = 10,
  DEBSE_STATUS_OUT_OF_RANGE = 11,
  DEBSE_STATUS_PANIC = 12,
} DebseStatus;

/**
 * Trigger law selector.
 */
typedef enum DebseTrigger {
  DEBSE_TRIGGER_ET = 0,
  DEBSE_TRIGGER_PT = 1,
  DEBSE_TRIGGER_ST = 2,
} DebseTrigger;

/**
 * Opaque scenario handle.
 */
typedef struct DebseScenario DebseScenario;

/**
 * Opaque sweep result handle.
 */
typedef struct DebseSweep DebseSweep;

/**
 * Opaque simulation trace handle.
 */
typedef struct DebseTrace DebseTrace;

/**
 * Summary of one run.
 */
typedef struct DebseRunStats {
  size_t steps;
  size_t agents;
  double comm;
  double err;
  double err_hat;
  /**
   * NaN when the scenario has no tracking reference.
   */
  double tracking;
} DebseRunStats;

/**
 * One cost point of a sweep.
 */
typedef struct DebseSweepPoint {
  double cost;
  double comm_avg;
  double err_avg;
  double err_std;
  size_t runs;
  /**
   * NaN when the scenario has no tracking reference.
   */
  double tracking_avg;
  double tracking_std;
} DebseSweepPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *debse_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *debse_version(void);

/**
 * Loads a built-in scenario by name.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum DebseStatus debse_scenario_builtin(const char *name, struct DebseScenario **out);

/**
 * Parses and builds a scenario from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum DebseStatus debse_scenario_from_json(const char *json, struct DebseScenario **out);

/**
 * Number of agents in the scenario.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum DebseStatus debse_scenario_agents(const struct DebseScenario *scenario, size_t *out);

/**
 * # Safety
 * `scenario` must be null or a handle not yet freed.
 */
void debse_scenario_free(struct DebseScenario *scenario);

/**
 * Simulates one seeded run with a constant cost and keeps the full trace.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum DebseStatus debse_simulate(const struct DebseScenario *scenario,
                                enum DebseTrigger trigger,
                                size_t horizon_m,
                                double cost,
                                uint64_t seed,
                                struct DebseTrace **out);

/**
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum DebseStatus debse_trace_stats(const struct DebseTrace *trace, struct DebseRunStats *out);

/**
 * Squared remote error `‖e_k‖²` and decision `γ_k` of one agent at step
 * `k` (1-based; `k = 0` is the initial state, where `γ` is 0).
 *
 * # Safety
 * `trace` must be a live handle; `error` and `gamma` must be writable.
 */
enum DebseStatus debse_trace_step(const struct DebseTrace *trace,
                                  size_t k,
                                  size_t agent,
                                  double *error,
                                  uint8_t *gamma);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void debse_trace_free(struct DebseTrace *trace);

/**
 * Monte Carlo sweep over `n_costs` constant costs.
 *
 * # Safety
 * `scenario` must be a live handle, `costs` must point to `n_costs`
 * doubles, and `out` must be writable.
 */
enum DebseStatus debse_sweep(const struct DebseScenario *scenario,
                             enum DebseTrigger trigger,
                             size_t horizon_m,
                             const double *costs,
                             size_t n_costs,
                             size_t runs,
                             uint64_t seed,
                             struct DebseSweep **out);

/**
 * # Safety
 * `sweep` must be a live handle; `out` must be writable.
 */
enum DebseStatus debse_sweep_len(const struct DebseSweep *sweep, size_t *out);

/**
 * # Safety
 * `sweep` must be a live handle; `out` must be writable.
 */
enum DebseStatus debse_sweep_point(const struct DebseSweep *sweep,
                                   size_t index,
                                   struct DebseSweepPoint *out);

/**
 * # Safety
 * `sweep` must be null or a handle not yet freed.
 */
void debse_sweep_free(struct DebseSweep *sweep);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEBSE_H */
