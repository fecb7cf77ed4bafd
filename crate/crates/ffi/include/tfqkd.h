#ifndef TFQKD_H
#define TFQKD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TfqkdStatus {
  TFQKD_STATUS_OK = 0,
  TFQKD_STATUS_NULL_POINTER = 1,
  // Bad parameter value, unknown key or malformed JSON.
  TFQKD_STATUS_INVALID_ARGUMENT = 2,
  // Counts inconsistent with the yield model.
  TFQKD_STATUS_INFEASIBLE = 3,
  // Dominance coefficients unavailable or verification failed.
  TFQKD_STATUS_DOMINANCE = 4,
  TFQKD_STATUS_INTERNAL = 5,
} TfqkdStatus;

// Run configuration: protocol, channel and budget.
typedef struct TfqkdParams TfqkdParams;

// Outcome of a key-rate evaluation.
typedef struct TfqkdResult TfqkdResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library from the same thread.
const char *tfqkd_last_error(void);

// New handle holding the default configuration. Free with
// [`tfqkd_params_free`].
struct TfqkdParams *tfqkd_params_new(void);

// Parses a flat JSON config (same keys as the command-line tool) into a new
// handle stored in `*out`.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
enum TfqkdStatus tfqkd_params_from_json(const char *json, struct TfqkdParams **out);

// # Safety
// `params` must come from this library and not be freed twice. NULL is a no-op.
void tfqkd_params_free(struct TfqkdParams *params);

// Sets one numeric config key, e.g. `"mu1"` or `"distance_km"`. For
// `"n_tot"` an infinite value selects the asymptotic limit. The handle is
// left unchanged on failure.
//
// # Safety
// `params` must be a live handle and `key` a NUL-terminated string.
enum TfqkdStatus tfqkd_params_set(struct TfqkdParams *params, const char *key, double value);

// Reads one numeric config key into `*out`. An asymptotic `n_tot` reads as
// +infinity.
//
// # Safety
// `params` must be a live handle, `key` a NUL-terminated string, `out` writable.
enum TfqkdStatus tfqkd_params_get(const struct TfqkdParams *params, const char *key, double *out);

// Checks every field of the handle.
//
// # Safety
// `params` must be a live handle.
enum TfqkdStatus tfqkd_params_validate(const struct TfqkdParams *params);

// Key rate at the expected counts of the configured run (asymptotic when
// `n_tot` is infinite). The new result handle is stored in `*out`.
//
// # Safety
// `params` must be a live handle and `out` writable.
enum TfqkdStatus tfqkd_rate(const struct TfqkdParams *params, struct TfqkdResult **out);

// # Safety
// `result` must come from [`tfqkd_rate`] and not be freed twice. NULL is a no-op.
void tfqkd_result_free(struct TfqkdResult *result);

// Secret bits per round; NaN for a NULL handle.
//
// # Safety
// `result` must be a live handle or NULL.
double tfqkd_result_rate_per_pulse(const struct TfqkdResult *result);

// Final key length in bits (per round in the asymptotic case).
//
// # Safety
// `result` must be a live handle or NULL.
double tfqkd_result_key_length(const struct TfqkdResult *result);

// Upper bound on the phase error rate.
//
// # Safety
// `result` must be a live handle or NULL.
double tfqkd_result_phase_error(const struct TfqkdResult *result);

// Composed security parameter of the run.
//
// # Safety
// `result` must be a live handle or NULL.
double tfqkd_result_eps_sec(const struct TfqkdResult *result);

// Result as a JSON object; free the string with [`tfqkd_string_free`].
//
// # Safety
// `result` must be a live handle or NULL.
char *tfqkd_result_to_json(const struct TfqkdResult *result);

// # Safety
// `s` must come from this library and not be freed twice. NULL is a no-op.
void tfqkd_string_free(char *s);

// Numerically checks the dominance inequality at the configured point
// (including any Lambda/Gamma overrides) on the truncated space of
// `cutoff`. `*pass` receives the verdict; a failed check is still
// [`TfqkdStatus::Ok`].
//
// # Safety
// `params` must be a live handle and `pass` writable.
enum TfqkdStatus tfqkd_verify_dominance(const struct TfqkdParams *params,
                                        uint32_t cutoff,
                                        bool *pass);

// Composed security parameter for a failure-probability budget.
//
// # Safety
// `out` must be writable.
enum TfqkdStatus tfqkd_compose_security(double epsilon,
                                        uint32_t zeta_bits,
                                        uint32_t zeta_prime_bits,
                                        double epsilon_err,
                                        double *out);

// Library version, static storage.
const char *tfqkd_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TFQKD_H */
