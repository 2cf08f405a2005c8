#ifndef CMRL_H
#define CMRL_H

/* Generated by cbindgen from the cmrl-ffi crate; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum CmrlStatus {
  CMRL_STATUS_OK = 0,
  // A required pointer argument was null.
  CMRL_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  CMRL_STATUS_INVALID_UTF8 = 2,
  // A JSON config or document failed to parse.
  CMRL_STATUS_BAD_JSON = 3,
  // A config value was rejected.
  CMRL_STATUS_CONFIG = 4,
  CMRL_STATUS_IO = 5,
  // Dataset or schema violated an invariant.
  CMRL_STATUS_DATA = 6,
  // An estimator or solver failed numerically.
  CMRL_STATUS_NUMERIC = 7,
  // The library caught a panic; state may be stale but memory is intact.
  CMRL_STATUS_PANIC = 8,
} CmrlStatus;

typedef struct CmrlDataset CmrlDataset;

typedef struct CmrlGraph CmrlGraph;

typedef struct CmrlPolicy CmrlPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; never freed.
const char *cmrl_version(void);

// Message from the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *cmrl_last_error(void);

// Frees a string returned through a `char**` out-parameter.
//
// # Safety
// `s` must be null or a pointer previously returned by this library.
void cmrl_string_free(char *s);

// Rolls `episodes` random-exploration episodes of the task described by
// `task_json` and returns the dataset.
//
// # Safety
// `task_json` must be a NUL-terminated string; `out` must be a valid
// pointer to receive the handle.
enum CmrlStatus cmrl_collect(const char *task_json,
                             size_t episodes,
                             uint64_t seed,
                             struct CmrlDataset **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
enum CmrlStatus cmrl_dataset_load(const char *path, struct CmrlDataset **out);

// # Safety
// `d` must be a live dataset handle; `path` a NUL-terminated string.
enum CmrlStatus cmrl_dataset_save(const struct CmrlDataset *d, const char *path);

// Episode count, or 0 for a null handle.
//
// # Safety
// `d` must be null or a live dataset handle.
size_t cmrl_dataset_episodes(const struct CmrlDataset *d);

// Transitions per episode, or 0 for a null handle.
//
// # Safety
// `d` must be null or a live dataset handle.
size_t cmrl_dataset_horizon(const struct CmrlDataset *d);

// # Safety
// `d` must be null or an owned dataset handle; it is invalid afterwards.
void cmrl_dataset_free(struct CmrlDataset *d);

// Runs event discovery. `config_json` may be null for default settings.
//
// # Safety
// `d` must be a live dataset handle; `config_json` null or NUL-terminated;
// `out` valid.
enum CmrlStatus cmrl_discover(const struct CmrlDataset *d,
                              const char *config_json,
                              struct CmrlGraph **out);

// Number of accepted memory units, or 0 for a null handle.
//
// # Safety
// `g` must be null or a live graph handle.
size_t cmrl_graph_unit_count(const struct CmrlGraph *g);

// Serializes the graph and its discovery report to JSON. The returned
// string must be released with `cmrl_string_free`.
//
// # Safety
// `g` must be a live graph handle; `out` valid.
enum CmrlStatus cmrl_graph_to_json(const struct CmrlGraph *g, char **out);

// Rebuilds a graph handle from `cmrl_graph_to_json` output.
//
// # Safety
// `json` must be a NUL-terminated string; `out` valid.
enum CmrlStatus cmrl_graph_from_json(const char *json, struct CmrlGraph **out);

// # Safety
// `g` must be null or an owned graph handle; it is invalid afterwards.
void cmrl_graph_free(struct CmrlGraph *g);

// Augments the dataset with the graph's memory units (null graph plans on
// raw observations), fits the tabular model, and solves it by value
// iteration.
//
// # Safety
// `d` must be a live dataset handle; `g` null or a live graph handle;
// `out` valid.
enum CmrlStatus cmrl_plan(const struct CmrlDataset *d,
                          const struct CmrlGraph *g,
                          double gamma,
                          double tol,
                          struct CmrlPolicy **out);

// Serializes the policy, its memory units, and solver stats to JSON. The
// returned string must be released with `cmrl_string_free`.
//
// # Safety
// `p` must be a live policy handle; `out` valid.
enum CmrlStatus cmrl_policy_to_json(const struct CmrlPolicy *p, char **out);

// Rolls fresh episodes of the task in `task_json` under the policy, with
// the policy's own memory units tracking events online. Writes the mean
// per-episode reward and the success rate; either out-pointer may be null
// to skip that statistic.
//
// # Safety
// `p` must be a live policy handle; `task_json` a NUL-terminated string;
// `mean_reward`/`success_rate` null or valid.
enum CmrlStatus cmrl_evaluate(const struct CmrlPolicy *p,
                              const char *task_json,
                              size_t episodes,
                              double *mean_reward,
                              double *success_rate);

// # Safety
// `p` must be null or an owned policy handle; it is invalid afterwards.
void cmrl_policy_free(struct CmrlPolicy *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMRL_H */
