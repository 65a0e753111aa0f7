#ifndef CIGN_H
#define CIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum CignStatus {
  CIGN_STATUS_OK = 0,
  CIGN_STATUS_NULL_POINTER = 1,
  CIGN_STATUS_INVALID_ARGUMENT = 2,
  CIGN_STATUS_CONFIG = 3,
  CIGN_STATUS_IO = 4,
  CIGN_STATUS_CORRUPT = 5,
  CIGN_STATUS_NUMERIC = 6,
  CIGN_STATUS_OUT_OF_RANGE = 7,
  CIGN_STATUS_PANIC = 8,
} CignStatus;

// Which prediction head a metric refers to.
typedef enum CignModality {
  CIGN_MODALITY_AUDIO = 0,
  CIGN_MODALITY_VISUAL = 1,
  CIGN_MODALITY_AUDIO_VISUAL = 2,
} CignModality;

// In-memory feature dataset.
typedef struct CignDataset CignDataset;

// Experiment configuration.
typedef struct CignExperiment CignExperiment;

// Outcome of one training run.
typedef struct CignResults CignResults;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next call into this library on the same thread.
const char *cign_last_error(void);

// Creates an experiment from a flat JSON object. NULL or `"{}"` gives the
// defaults; unknown keys are rejected.
//
// # Safety
// `json` must be NULL or a NUL-terminated string; `out` must be writable.
enum CignStatus cign_experiment_new(const char *json, struct CignExperiment **out);

// Overrides the training seed (and the synthetic data seed unless one was
// set explicitly).
//
// # Safety
// `exp` must be a live handle from [`cign_experiment_new`].
enum CignStatus cign_experiment_set_seed(struct CignExperiment *exp, uint64_t seed);

// # Safety
// `exp` must be NULL or a live handle; it is invalid afterwards.
void cign_experiment_free(struct CignExperiment *exp);

// Generates the experiment's synthetic dataset.
//
// # Safety
// `exp` must be a live handle; `out` must be writable.
enum CignStatus cign_dataset_synthetic(const struct CignExperiment *exp, struct CignDataset **out);

// Loads a feature directory written by [`cign_dataset_save`] or `cign synth`.
//
// # Safety
// `dir` must be a NUL-terminated path; `out` must be writable.
enum CignStatus cign_dataset_load(const char *dir, struct CignDataset **out);

// # Safety
// `ds` must be a live handle; `dir` a NUL-terminated path.
enum CignStatus cign_dataset_save(const struct CignDataset *ds, const char *dir);

// Total number of samples over all splits.
//
// # Safety
// `ds` must be a live handle; `out` must be writable.
enum CignStatus cign_dataset_len(const struct CignDataset *ds, uintptr_t *out);

// # Safety
// `ds` must be NULL or a live handle; it is invalid afterwards.
void cign_dataset_free(struct CignDataset *ds);

// Trains over the full task sequence.
//
// # Safety
// `exp` and `ds` must be live handles; `out` must be writable.
enum CignStatus cign_run(const struct CignExperiment *exp,
                         const struct CignDataset *ds,
                         struct CignResults **out);

// Number of tasks in the run.
//
// # Safety
// `res` must be a live handle; `out` must be writable.
enum CignStatus cign_results_num_tasks(const struct CignResults *res, uintptr_t *out);

// Final Average Accuracy and Forgetting of one head. Forgetting is NaN for a
// single-task run.
//
// # Safety
// `res` must be a live handle; both out pointers must be writable.
enum CignStatus cign_results_metrics(const struct CignResults *res,
                                     enum CignModality modality,
                                     double *avg_acc,
                                     double *forgetting);

// Accuracy on task `task` measured after training task `after_task`.
//
// # Safety
// `res` must be a live handle; `out` must be writable.
enum CignStatus cign_results_accuracy(const struct CignResults *res,
                                      enum CignModality modality,
                                      uintptr_t after_task,
                                      uintptr_t task,
                                      double *out);

// Writes the run artifacts (config, accuracy matrix, log, metrics) to `dir`.
//
// # Safety
// `res` must be a live handle; `dir` a NUL-terminated path.
enum CignStatus cign_results_write(const struct CignResults *res, const char *dir);

// # Safety
// `res` must be NULL or a live handle; it is invalid afterwards.
void cign_results_free(struct CignResults *res);

// Runs the gradient-check suite. `passed` is set to whether every check is
// within tolerance; `max_rel_error` to the worst error seen.
//
// # Safety
// Both out pointers must be writable.
enum CignStatus cign_gradcheck(uint64_t seed,
                               bool inject_fault,
                               double *max_rel_error,
                               bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CIGN_H */
