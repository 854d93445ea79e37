/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef DPLAC_H
#define DPLAC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Round had no sampled clients.
#define DPLAC_FLAG_EMPTY_COHORT 1

// A nonpositive loss held the threshold.
#define DPLAC_FLAG_HELD_C 2

// Round-1 voting fell back to the default threshold.
#define DPLAC_FLAG_FALLBACK_C0 4

// Round-1 loss histogram had no participants.
#define DPLAC_FLAG_FALLBACK_V0 8

// Status code returned by every entry point.
typedef enum DplacStatus {
  DPLAC_STATUS_OK = 0,
  DPLAC_STATUS_NULL_POINTER = 1,
  DPLAC_STATUS_INVALID_UTF8 = 2,
  DPLAC_STATUS_INVALID_ARGUMENT = 3,
  DPLAC_STATUS_CONFIG_ERROR = 4,
  DPLAC_STATUS_RUNTIME_ERROR = 5,
  DPLAC_STATUS_OUT_OF_RANGE = 6,
  DPLAC_STATUS_PANIC = 7,
} DplacStatus;

// Parsed, validated experiment configuration.
typedef struct DplacConfig DplacConfig;

// Finished experiment.
typedef struct DplacResult DplacResult;

// One row of the per-round log.
typedef struct DplacRoundRecord {
  uint64_t round;
  uint64_t cohort_size;
  double clip_threshold;
  double loss_estimate;
  double sigma;
  double accuracy;
  double loss;
  // Bitwise OR of the `DPLAC_FLAG_*` constants.
  uint32_t flags;
} DplacRoundRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into the library on the same thread.
const char *dplac_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dplac_version(void);

// Smallest noise multiplier meeting `(epsilon, delta)` over `rounds`
// rounds at sampling rate `q`.
//
// # Safety
// `out_z` must be NULL or point to writable memory for one `double`.
enum DplacStatus dplac_accountant_solve_z(double epsilon,
                                          double delta,
                                          double q,
                                          uint64_t rounds,
                                          double *out_z);

// Epsilon spent by noise multiplier `z`.
//
// # Safety
// `out_epsilon` must be NULL or point to writable memory for one `double`.
enum DplacStatus dplac_accountant_epsilon(double z,
                                          double delta,
                                          double q,
                                          uint64_t rounds,
                                          double *out_epsilon);

// Parses `key=value` configuration text.
//
// # Safety
// `text` must be NULL or a NUL-terminated string; `out_config` must be NULL
// or writable.
enum DplacStatus dplac_config_parse(const char *text, struct DplacConfig **out_config);

// Sets one key. On failure the configuration is left unchanged.
//
// # Safety
// `config` must be NULL or a live handle; `key` and `value` must be NULL or
// NUL-terminated strings.
enum DplacStatus dplac_config_set(struct DplacConfig *config, const char *key, const char *value);

// Writes the full configuration, defaults included, as a newly allocated
// string to be released with [`dplac_string_free`].
//
// # Safety
// `config` must be NULL or a live handle; `out_text` must be NULL or writable.
enum DplacStatus dplac_config_serialize(const struct DplacConfig *config, char **out_text);

// # Safety
// `text` must be NULL or a string returned by this library.
void dplac_string_free(char *text);

// # Safety
// `config` must be NULL or a handle from [`dplac_config_parse`] that has not
// been freed.
void dplac_config_free(struct DplacConfig *config);

// Runs the experiment on `workers` threads (0 picks the machine default).
//
// # Safety
// `config` must be NULL or a live handle; `out_result` must be NULL or writable.
enum DplacStatus dplac_run(const struct DplacConfig *config,
                           uint32_t workers,
                           struct DplacResult **out_result);

// Number of logged rounds, or 0 for a NULL handle.
//
// # Safety
// `result` must be NULL or a live handle.
size_t dplac_result_num_rounds(const struct DplacResult *result);

// Copies round `index` (zero-based) into `out_record`.
//
// # Safety
// `result` must be NULL or a live handle; `out_record` must be NULL or writable.
enum DplacStatus dplac_result_round(const struct DplacResult *result,
                                    size_t index,
                                    struct DplacRoundRecord *out_record);

// Noise multiplier of the training mechanism.
//
// # Safety
// `result` must be NULL or a live handle; `out_z` must be NULL or writable.
enum DplacStatus dplac_result_noise_multiplier(const struct DplacResult *result, double *out_z);

// Threshold used in round 1 (histogram estimate or configured value).
//
// # Safety
// `result` must be NULL or a live handle; `out_c0` must be NULL or writable.
enum DplacStatus dplac_result_initial_threshold(const struct DplacResult *result, double *out_c0);

// Number of model parameters, or 0 for a NULL handle.
//
// # Safety
// `result` must be NULL or a live handle.
size_t dplac_result_num_params(const struct DplacResult *result);

// Copies the final parameters into `buffer`, which must hold exactly
// [`dplac_result_num_params`] values.
//
// # Safety
// `result` must be NULL or a live handle; `buffer` must be NULL or point to
// `len` writable doubles.
enum DplacStatus dplac_result_params(const struct DplacResult *result, double *buffer, size_t len);

// Writes `rounds.csv`, `summary.txt` and `model.bin` into `dir`.
//
// # Safety
// `result` must be NULL or a live handle; `dir` must be NULL or a
// NUL-terminated path.
enum DplacStatus dplac_result_write_outputs(const struct DplacResult *result, const char *dir);

// # Safety
// `result` must be NULL or a handle from [`dplac_run`] that has not been freed.
void dplac_result_free(struct DplacResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPLAC_H */
