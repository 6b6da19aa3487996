#ifndef CONSENSUS_IRL_H
#define CONSENSUS_IRL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CirlStatus {
  CIRL_STATUS_OK = 0,
  CIRL_STATUS_NULL_POINTER = 1,
  CIRL_STATUS_INVALID_ARGUMENT = 2,
  CIRL_STATUS_SCHEMA = 3,
  CIRL_STATUS_PARAMETER = 4,
  CIRL_STATUS_EMPTY = 5,
  CIRL_STATUS_NUMERIC = 6,
  CIRL_STATUS_IO = 7,
  CIRL_STATUS_PANIC = 8,
} CirlStatus;

// A demonstration set with its state and action counts, plus ground truth
// when it was synthesized.
typedef struct CirlDataset CirlDataset;

// Result of a two-stage run.
typedef struct CirlRun CirlRun;

// Ground-truth recovery metrics. Precision and recall are NaN when undefined.
typedef struct CirlRecovery {
  double spearman_stage1;
  double spearman_stage2;
  double policy_agreement_1;
  double policy_agreement_2;
  double evd_1;
  double evd_2;
  double prune_precision;
  double prune_recall;
} CirlRecovery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *cirl_last_error(void);

// Load `trajectories.csv` (and `space.json`, `world.json`, `labels.csv` when
// present) from a run directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be a valid pointer.
enum CirlStatus cirl_dataset_load(const char *dir, struct CirlDataset **out);

// Generate a synthetic world and expert population from a JSON run config
// (null for defaults).
//
// # Safety
// `config_json` must be null or NUL-terminated; `out` must be a valid pointer.
enum CirlStatus cirl_dataset_synthesize(const char *config_json, struct CirlDataset **out);

// Write the dataset in the layout `cirl_dataset_load` reads.
//
// # Safety
// `dataset` must come from this library; `dir` must be NUL-terminated.
enum CirlStatus cirl_dataset_write(const struct CirlDataset *dataset, const char *dir);

// Number of trajectories; 0 for a null handle.
//
// # Safety
// `dataset` must be null or come from this library.
size_t cirl_dataset_len(const struct CirlDataset *dataset);

// # Safety
// `dataset` must be null or come from this library.
size_t cirl_dataset_n_states(const struct CirlDataset *dataset);

// # Safety
// `dataset` must be null or come from this library.
size_t cirl_dataset_n_actions(const struct CirlDataset *dataset);

// # Safety
// `dataset` must be null or an unfreed handle from this library.
void cirl_dataset_free(struct CirlDataset *dataset);

// Train, prune and retrain using the `irl` and `prune` sections of a JSON
// run config (null for defaults).
//
// # Safety
// `dataset` must come from this library; `config_json` must be null or
// NUL-terminated; `out` must be a valid pointer.
enum CirlStatus cirl_run_two_stage(const struct CirlDataset *dataset,
                                   const char *config_json,
                                   struct CirlRun **out);

// # Safety
// `run` must be null or come from this library.
size_t cirl_run_n_states(const struct CirlRun *run);

// # Safety
// `run` must be null or come from this library.
size_t cirl_run_n_pruned(const struct CirlRun *run);

// Copy the per-state rewards of `stage` (1 or 2) into `out[0..len]`.
// `len` must be at least `cirl_run_n_states(run)`.
//
// # Safety
// `out` must point to `len` writable doubles.
enum CirlStatus cirl_run_rewards(const struct CirlRun *run,
                                 uint32_t stage,
                                 double *out,
                                 size_t len);

// Copy the greedy policy of `stage` (1 or 2) into `out[0..len]`.
//
// # Safety
// `out` must point to `len` writable `uint32_t`.
enum CirlStatus cirl_run_policy(const struct CirlRun *run,
                                uint32_t stage,
                                uint32_t *out,
                                size_t len);

// Compare a run against the dataset's ground truth. Fails with
// `CIRL_STATUS_EMPTY` when the dataset was not synthesized.
//
// # Safety
// Handles must come from this library; `out` must be a valid pointer.
enum CirlStatus cirl_run_recovery(const struct CirlRun *run,
                                  const struct CirlDataset *dataset,
                                  struct CirlRecovery *out);

// Write reward files, scores, per-state deltas and training logs into `dir`.
//
// # Safety
// Handles must come from this library; `dir` must be NUL-terminated.
enum CirlStatus cirl_run_write(const struct CirlRun *run,
                               const struct CirlDataset *dataset,
                               const char *dir);

// # Safety
// `run` must be null or an unfreed handle from this library.
void cirl_run_free(struct CirlRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONSENSUS_IRL_H */
