#ifndef MINSENSE_H
#define MINSENSE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Status code returned by every function.
 */
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  MS_STATUS_NULL_ARGUMENT = 1,
  /*
   Malformed JSON, invalid UTF-8, or an argument out of range.
   */
  MS_STATUS_INVALID_INPUT = 2,
  /*
   No admissible path exists.
   */
  MS_STATUS_NO_SOLUTION = 3,
  /*
   The seed path cannot be certified for smoothing.
   */
  MS_STATUS_INIT_INFEASIBLE = 4,
  /*
   A solver or factorization failed.
   */
  MS_STATUS_NUMERICAL_FAILURE = 5,
  /*
   Index outside the object.
   */
  MS_STATUS_OUT_OF_RANGE = 6,
  /*
   Internal panic caught at the boundary.
   */
  MS_STATUS_PANIC = 7,
} MsStatus;

/*
 Opaque belief path.
 */
typedef struct MsPath MsPath;

/*
 Opaque environment plus initial belief.
 */
typedef struct MsScenario MsScenario;

/*
 Opaque smoothing result.
 */
typedef struct MsSmoothResult MsSmoothResult;

/*
 Run parameters. Obtain defaults from [`ms_run_config_default`].
 */
typedef struct MsRunConfig {
  double alpha;
  double pr;
  double w_scale;
  /*
   Transitions of the extracted path; 0 keeps the tree chain.
   */
  uintptr_t k;
  uintptr_t n_nodes;
  uint64_t seed;
  uintptr_t max_iters;
  uintptr_t mc_samples;
} MsRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the most recent failure on this thread. Valid until
 the next failing call on the same thread.
 */
const char *ms_last_error(void);

struct MsRunConfig ms_run_config_default(void);

/*
 Parses an environment JSON document.

 # Safety
 `json` must be a NUL-terminated string and `out` writable.
 */
enum MsStatus ms_scenario_from_json(const char *json, struct MsScenario **out);

/*
 Loads the bundled analogue environment.

 # Safety
 `out` must be writable.
 */
enum MsStatus ms_scenario_analog(struct MsScenario **out);

/*
 # Safety
 `s` must be null or a handle from this library not yet freed.
 */
void ms_scenario_free(struct MsScenario *s);

/*
 Grows a belief tree and extracts a seed path.

 # Safety
 Pointers must be valid; `out` writable.
 */
enum MsStatus ms_plan(const struct MsScenario *sc,
                      const struct MsRunConfig *cfg,
                      struct MsPath **out);

/*
 Parses a path JSON document.

 # Safety
 `json` must be a NUL-terminated string and `out` writable.
 */
enum MsStatus ms_path_from_json(const char *json, struct MsPath **out);

/*
 Serializes a path; release the string with [`ms_string_free`].

 # Safety
 `p` must be a live handle and `out` writable.
 */
enum MsStatus ms_path_to_json(const struct MsPath *p, char **out);

/*
 # Safety
 `s` must be null or a string returned by this library.
 */
void ms_string_free(char *s);

/*
 # Safety
 `p` must be null or a handle from this library not yet freed.
 */
void ms_path_free(struct MsPath *p);

/*
 Number of transitions `K`; the path holds `K + 1` states.

 # Safety
 `p` must be a live handle and `out` writable.
 */
enum MsStatus ms_path_transitions(const struct MsPath *p, uintptr_t *out);

/*
 State dimension.

 # Safety
 `p` must be a live handle and `out` writable.
 */
enum MsStatus ms_path_dim(const struct MsPath *p, uintptr_t *out);

/*
 Copies the mean of state `k` (`0..=K`) into `out[0..dim]`.

 # Safety
 `p` must be a live handle and `out` must hold `dim` doubles.
 */
enum MsStatus ms_path_mean(const struct MsPath *p, uintptr_t k, double *out);

/*
 Total steering cost with the path's own weight.

 # Safety
 `p` must be a live handle and `out` writable.
 */
enum MsStatus ms_path_cost(const struct MsPath *p, double *out);

/*
 Runs the convex-concave smoother from `seed`.

 # Safety
 Pointers must be valid; `out` writable.
 */
enum MsStatus ms_smooth(const struct MsScenario *sc,
                        const struct MsPath *seed,
                        const struct MsRunConfig *cfg,
                        struct MsSmoothResult **out);

/*
 Number of trace rows (iteration 0 is the seed).

 # Safety
 `r` must be a live handle and `out` writable.
 */
enum MsStatus ms_smooth_trace_len(const struct MsSmoothResult *r, uintptr_t *out);

/*
 Cost after iteration `i`.

 # Safety
 `r` must be a live handle and `out` writable.
 */
enum MsStatus ms_smooth_trace_cost(const struct MsSmoothResult *r, uintptr_t i, double *out);

/*
 Largest filter-recursion residual of the smoothed path.

 # Safety
 `r` must be a live handle and `out` writable.
 */
enum MsStatus ms_smooth_kf_residual(const struct MsSmoothResult *r, double *out);

/*
 Copies the smoothed path into a new handle.

 # Safety
 `r` must be a live handle and `out` writable.
 */
enum MsStatus ms_smooth_path(const struct MsSmoothResult *r, struct MsPath **out);

/*
 # Safety
 `r` must be null or a handle from this library not yet freed.
 */
void ms_smooth_free(struct MsSmoothResult *r);

/*
 Re-certifies `p` and runs the Monte Carlo check; `passed` is 1 when every
 check passes and 0 otherwise.

 # Safety
 Pointers must be valid; `passed` writable.
 */
enum MsStatus ms_validate(const struct MsScenario *sc,
                          const struct MsPath *p,
                          const struct MsRunConfig *cfg,
                          int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MINSENSE_H */
