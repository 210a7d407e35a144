#ifndef SWITCHLAB_H
#define SWITCHLAB_H

/* Generated by cbindgen from crates/ffi/src. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_INVALID_ARGUMENT = 2,
  SL_STATUS_PARSE = 3,
  SL_STATUS_NUMERICAL = 4,
  SL_STATUS_IO = 5,
  SL_STATUS_MISMATCH = 6,
  SL_STATUS_BUFFER_TOO_SMALL = 7,
  SL_STATUS_PANIC = 8,
} SlStatus;

typedef enum SlChannel {
  SL_CHANNEL_ADDITIVE_FORCE = 0,
  SL_CHANNEL_FORCING_AMPLITUDE = 1,
  SL_CHANNEL_GAP = 2,
  SL_CHANNEL_CUBIC_STIFFNESS = 3,
} SlChannel;

// Opaque record of a finished scenario run.
typedef struct SlRun SlRun;

// Opaque parsed scenario.
typedef struct SlScenario SlScenario;

// Opaque oscillator handle.
typedef struct SlSystem SlSystem;

typedef struct SlImpactParams {
  double zeta;
  double e;
  double a;
  double beta;
  double omega;
} SlImpactParams;

typedef struct SlDuffingParams {
  double gamma;
  double omega;
  double p1;
  double p2;
} SlDuffingParams;

// Position and velocity.
typedef struct SlState {
  double x;
  double v;
} SlState;

// Settled attractor summary. `period` is 0 for aperiodic motion and
// `impacts_per_period` is -1 for smooth systems.
typedef struct SlAttractor {
  uint32_t period;
  int32_t impacts_per_period;
  double peak_to_peak;
  double contact_time;
  struct SlState anchor;
} SlAttractor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sl_version(void);

// Copy the message of the last failed call on this thread into `buf`.
// Returns the number of bytes needed including the terminator, or 0 when
// there is no message. Nothing is written when `len` is too small.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t sl_last_error_message(char *buf, size_t len);

// Create a soft-impact oscillator with the given control channel.
//
// # Safety
// `params` must be readable and `out` writable.
enum SlStatus sl_system_soft_impact(const struct SlImpactParams *params,
                                    enum SlChannel channel,
                                    struct SlSystem **out);

// Create a Duffing oscillator (controlled through its cubic stiffness).
//
// # Safety
// `params` must be readable and `out` writable.
enum SlStatus sl_system_duffing(const struct SlDuffingParams *params, struct SlSystem **out);

// Release a system. Null is ignored.
//
// # Safety
// `sys` must come from `sl_system_*` and not be used afterwards.
void sl_system_free(struct SlSystem *sys);

// Forcing period `2 pi / omega`.
//
// # Safety
// `sys` must be a live handle and `out` writable.
enum SlStatus sl_system_period(const struct SlSystem *sys, double *out);

// Evaluate the vector field at `(tau, y)` under control `u`.
//
// # Safety
// `sys` must be a live handle and `out` writable.
enum SlStatus sl_system_rhs(const struct SlSystem *sys,
                            double tau,
                            struct SlState y,
                            double u,
                            struct SlState *out);

// Integrate without control from `tau0` to `tau1` with step `h` and store
// the final state.
//
// # Safety
// `sys` must be a live handle and `out` writable.
enum SlStatus sl_integrate(const struct SlSystem *sys,
                           struct SlState y0,
                           double tau0,
                           double tau1,
                           double h,
                           struct SlState *out);

// Settle from `y0` with default transient and sampling settings and step
// `h`, and describe the attractor reached.
//
// # Safety
// `sys` must be a live handle and `out` writable.
enum SlStatus sl_settle(const struct SlSystem *sys,
                        struct SlState y0,
                        double h,
                        struct SlAttractor *out);

// Parse a TOML scenario.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` writable.
enum SlStatus sl_scenario_parse(const char *toml, struct SlScenario **out);

// Load a built-in scenario by name.
//
// # Safety
// `name` must be a NUL-terminated string and `out` writable.
enum SlStatus sl_scenario_builtin(const char *name, struct SlScenario **out);

// Release a scenario. Null is ignored.
//
// # Safety
// `sc` must come from `sl_scenario_*` and not be used afterwards.
void sl_scenario_free(struct SlScenario *sc);

// Run a scenario, writing its outputs and `manifest.json` into `out_dir`.
//
// # Safety
// `sc` must be a live handle, `out_dir` a NUL-terminated string and `out`
// writable.
enum SlStatus sl_scenario_run(const struct SlScenario *sc, const char *out_dir, struct SlRun **out);

// Release a run record. Null is ignored.
//
// # Safety
// `run` must come from `sl_scenario_run` and not be used afterwards.
void sl_run_free(struct SlRun *run);

// Copy the JSON run summary into `buf` (see [`sl_run_output_name`] for the
// buffer protocol).
//
// # Safety
// `run` must be a live handle; `buf` null or `len` writable bytes; `needed`
// null or writable.
enum SlStatus sl_run_summary(const struct SlRun *run, char *buf, size_t len, size_t *needed);

// Number of output files recorded in the manifest.
//
// # Safety
// `run` must be a live handle and `out` writable.
enum SlStatus sl_run_output_count(const struct SlRun *run, size_t *out);

// Copy the name of output `index` into `buf`. `needed` receives the size
// including the terminator; pass a null `buf` with `len == 0` to query it.
//
// # Safety
// `run` must be a live handle; `buf` null or `len` writable bytes; `needed`
// null or writable.
enum SlStatus sl_run_output_name(const struct SlRun *run,
                                 size_t index,
                                 char *buf,
                                 size_t len,
                                 size_t *needed);

// Re-run the scenario recorded in a manifest and compare output digests.
// Returns `SL_STATUS_MISMATCH` when any output differs.
//
// # Safety
// `manifest_path` must be a NUL-terminated string.
enum SlStatus sl_manifest_verify(const char *manifest_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWITCHLAB_H */
