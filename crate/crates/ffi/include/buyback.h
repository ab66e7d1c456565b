#ifndef BUYBACK_H
#define BUYBACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call. Values above zero match the CLI exit codes.
typedef enum BbStatus {
  BB_STATUS_OK = 0,
  // I/O or other failure.
  BB_STATUS_FAILURE = 1,
  // Invalid configuration or argument.
  BB_STATUS_CONFIG = 2,
  // Checkpoint and configuration do not belong together.
  BB_STATUS_MISMATCH = 3,
  // Non-finite value or domain error.
  BB_STATUS_NUMERICAL = 4,
  // A required pointer was null or a buffer too small.
  BB_STATUS_INVALID_ARGUMENT = 5,
  // Internal panic; the handle must not be used further.
  BB_STATUS_PANIC = 6,
} BbStatus;

// Opaque model handle.
typedef struct BbModel BbModel;

// Relaxed-stopping evaluation summary.
typedef struct BbReport {
  double mean;
  double variance;
  double objective;
  double objective_normalized;
  double mean_settlement_day;
} BbReport;

// Contract state on a given day.
typedef struct BbState {
  size_t day;
  double price;
  double average;
  double cash;
  double inventory;
} BbState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a TOML run configuration and initializes the policy from its seed.
//
// # Safety
// `config_path` is a nul-terminated string; `out` is writable.
enum BbStatus bb_model_from_config(const char *config_path, struct BbModel **out);

// Replaces the model's parameters with a checkpoint of the same contract.
//
// # Safety
// `model` is a live handle; `path` is a nul-terminated string.
enum BbStatus bb_model_load_checkpoint(struct BbModel *model, const char *path);

// # Safety
// `model` is a live handle; `path` is a nul-terminated string.
enum BbStatus bb_model_save_checkpoint(const struct BbModel *model, const char *path);

// Trains from the current parameters with the configured schedule. On a
// numerical abort the last finite parameters are kept.
//
// # Safety
// `model` is a live handle; `heldout_normalized` is null or writable.
enum BbStatus bb_model_train(struct BbModel *model, double *heldout_normalized);

// Relaxed evaluation on `paths` fresh trajectories drawn with `seed`.
//
// # Safety
// `model` is a live handle; `out` is writable.
enum BbStatus bb_model_evaluate(const struct BbModel *model,
                                size_t paths,
                                uint64_t seed,
                                struct BbReport *out);

// Purchase rate (shares per day) chosen in `state`.
//
// # Safety
// `model` is a live handle; `state` is readable; `out` is writable.
enum BbStatus bb_model_trade_rate(const struct BbModel *model,
                                  const struct BbState *state,
                                  double *out);

// Probability of settling in `state`.
//
// # Safety
// `model` is a live handle; `state` is readable; `out` is writable.
enum BbStatus bb_model_stop_probability(const struct BbModel *model,
                                        const struct BbState *state,
                                        double *out);

// Days to expiry `N` of the model's market; paths hold `N + 1` prices.
//
// # Safety
// `model` is a live handle; `out` is writable.
enum BbStatus bb_model_days(const struct BbModel *model, size_t *out);

// Writes `count` simulated paths row-major into `out`, which must hold
// `count * (N + 1)` doubles.
//
// # Safety
// `model` is a live handle; `out` points to `out_len` writable doubles.
enum BbStatus bb_simulate_paths(const struct BbModel *model,
                                size_t count,
                                uint64_t seed,
                                double *out,
                                size_t out_len);

// Message of the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *bb_last_error_message(void);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` is null or a handle not yet freed.
void bb_model_free(struct BbModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BUYBACK_H */
