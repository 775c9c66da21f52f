#ifndef CANBET_H
#define CANBET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Anything but `Ok` leaves a message for
 * [`canbet_last_error`].
 */
typedef enum CanbetStatus {
  CANBET_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  CANBET_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CANBET_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument was malformed or out of range.
   */
  CANBET_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The input data violated an invariant (unknown id, unreachable pair, ...).
   */
  CANBET_STATUS_DATA_ERROR = 4,
  /**
   * A computation failed numerically or tripped a resource guard.
   */
  CANBET_STATUS_NUMERICAL_ERROR = 5,
} CanbetStatus;

/**
 * Opaque road network.
 */
typedef struct CanbetNetwork CanbetNetwork;

/**
 * Opaque centrality report: per-node and per-road scores, computed once.
 */
typedef struct CanbetReport CanbetReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never free it.
 */
const char *canbet_version(void);

/**
 * Message of the last failure on this thread, or NULL when none happened.
 * Valid until the next failing call on the same thread.
 */
const char *canbet_last_error(void);

/**
 * Load a network from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer; on `Ok`
 * the caller owns the handle and must release it with
 * [`canbet_network_free`].
 */
enum CanbetStatus canbet_network_load(const char *path, struct CanbetNetwork **out);

/**
 * Parse a network from a JSON string instead of a file.
 *
 * # Safety
 * Same contract as [`canbet_network_load`].
 */
enum CanbetStatus canbet_network_from_json(const char *json, struct CanbetNetwork **out);

/**
 * Release a network handle. NULL is a no-op.
 *
 * # Safety
 * `net` must come from a `canbet_network_*` constructor and not be used
 * afterwards.
 */
void canbet_network_free(struct CanbetNetwork *net);

/**
 * Intersection and existing-road counts. Either out-pointer may be NULL.
 *
 * # Safety
 * `net` must be a live handle; non-NULL out-pointers must be writable.
 */
enum CanbetStatus canbet_network_counts(const struct CanbetNetwork *net,
                                        uintptr_t *out_intersections,
                                        uintptr_t *out_roads);

/**
 * Shortest distance between two intersections, avoiding `blocked` roads
 * (`blocked_len` strings of the form `FROM-TO`; pass NULL/0 for none).
 *
 * # Safety
 * `net` must be a live handle; `blocked` must point to `blocked_len`
 * NUL-terminated strings; non-NULL out-pointers must be writable.
 */
enum CanbetStatus canbet_route_distance(const struct CanbetNetwork *net,
                                        const char *from,
                                        const char *to,
                                        const char *const *blocked,
                                        uintptr_t blocked_len,
                                        double *out_distance);

/**
 * Expected cost of the optimal travel plan with recourse, and the first
 * action as a newly allocated string (`traverse A-B`, `wait A-B`, or `none`;
 * free it with [`canbet_string_free`]). `repair_wait` is the cost of waiting
 * at a blocked road; pass INFINITY to forbid waiting.
 *
 * # Safety
 * `net` must be a live handle; non-NULL out-pointers must be writable.
 */
enum CanbetStatus canbet_ctp_solve(const struct CanbetNetwork *net,
                                   const char *from,
                                   const char *to,
                                   double repair_wait,
                                   double *out_cost,
                                   char **out_first_action);

/**
 * Expected extra travel cost for the `road_from`-`road_to` journey leg when
 * the named road blocks, against the journey `from` -> `to`.
 *
 * # Safety
 * `net` must be a live handle; non-NULL out-pointers must be writable.
 */
enum CanbetStatus canbet_delta_distance(const struct CanbetNetwork *net,
                                        const char *from,
                                        const char *to,
                                        const char *road_from,
                                        const char *road_to,
                                        double repair_wait,
                                        double *out_delta);

/**
 * Compute closeness, betweenness, and the blocking-aware road score for the
 * whole network, equal trip weights, exact evaluation.
 *
 * # Safety
 * `net` must be a live handle and `out` writable; on `Ok` the caller owns
 * the report and must release it with [`canbet_report_free`].
 */
enum CanbetStatus canbet_centrality_report(const struct CanbetNetwork *net,
                                           double repair_wait,
                                           struct CanbetReport **out);

/**
 * Scores of one road from a report. Either out-pointer may be NULL.
 *
 * # Safety
 * `report` must be a live handle; non-NULL out-pointers must be writable.
 */
enum CanbetStatus canbet_report_road(const struct CanbetReport *report,
                                     const char *road_from,
                                     const char *road_to,
                                     double *out_betweenness,
                                     double *out_canadian_betweenness);

/**
 * Scores of one intersection from a report. Either out-pointer may be NULL.
 *
 * # Safety
 * `report` must be a live handle; non-NULL out-pointers must be writable.
 */
enum CanbetStatus canbet_report_node(const struct CanbetReport *report,
                                     const char *id,
                                     double *out_closeness,
                                     double *out_betweenness);

/**
 * Release a centrality report. NULL is a no-op.
 *
 * # Safety
 * `report` must come from [`canbet_centrality_report`] and not be used
 * afterwards.
 */
void canbet_report_free(struct CanbetReport *report);

/**
 * Release a string allocated by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must come from a function documented to allocate and not be used
 * afterwards.
 */
void canbet_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CANBET_H */
