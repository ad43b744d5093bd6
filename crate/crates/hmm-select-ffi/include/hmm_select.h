#ifndef HMM_SELECT_H
#define HMM_SELECT_H

/* Generated by cbindgen from hmm-select-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * ABI version of this header; bump on breaking changes.
 */
#define HMMSEL_ABI_VERSION 1

/**
 * Status codes returned by every fallible function.
 */
typedef enum HmmselStatus {
  HMMSEL_STATUS_OK = 0,
  HMMSEL_STATUS_NULL_POINTER = 1,
  HMMSEL_STATUS_INVALID_ARGUMENT = 2,
  HMMSEL_STATUS_DOMAIN = 3,
  HMMSEL_STATUS_NUMERICAL = 4,
  HMMSEL_STATUS_INSUFFICIENT_DATA = 5,
  HMMSEL_STATUS_ILL_CONDITIONED_MOMENTS = 6,
  HMMSEL_STATUS_DIAGONALIZATION_FAILURE = 7,
  HMMSEL_STATUS_OPTIMIZATION_STALLED = 8,
  HMMSEL_STATUS_NO_UNIQUE_STATIONARY = 9,
  HMMSEL_STATUS_UNALIGNED_FAMILY = 10,
  HMMSEL_STATUS_SCHEMA_VERSION = 11,
  HMMSEL_STATUS_IO = 12,
  HMMSEL_STATUS_SERIALIZATION = 13,
  HMMSEL_STATUS_BUFFER_TOO_SMALL = 14,
  HMMSEL_STATUS_PANIC = 15,
} HmmselStatus;

/**
 * Selection variants exposed over the ABI.
 */
typedef enum HmmselVariant {
  HMMSEL_VARIANT_STANDARD = 0,
  HMMSEL_VARIANT_POS = 1,
  HMMSEL_VARIANT_MAX = 2,
} HmmselVariant;

/**
 * Penalty-calibration policies exposed over the ABI.
 */
typedef enum HmmselCalibration {
  HMMSEL_CALIBRATION_EACH_JUMP = 0,
  HMMSEL_CALIBRATION_JUMP_MAX = 1,
  HMMSEL_CALIBRATION_JUMP_MEAN = 2,
} HmmselCalibration;

/**
 * Opaque estimator-family handle.
 */
typedef struct HmmselFamily HmmselFamily;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * ABI version of the loaded library.
 */
uint32_t hmmsel_abi_version(void);

/**
 * Thread-local message describing the most recent failure. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *hmmsel_last_error(void);

/**
 * Samples `out_len` observations from the three-state benchmark HMM.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles.
 */
enum HmmselStatus hmmsel_simulate_benchmark(uint64_t seed, double *out, size_t out_len);

/**
 * Runs the spectral sweep over the model grid `m_min..=m_max` (step
 * `m_step`) and returns an aligned estimator family.
 *
 * # Safety
 * `obs` must point to `n_obs` readable doubles; `out` must be a valid
 * location for one pointer.
 */
enum HmmselStatus hmmsel_spectral_family(const double *obs,
                                         size_t n_obs,
                                         uint32_t k,
                                         uint32_t edge_dim,
                                         uint32_t m_min,
                                         uint32_t m_max,
                                         uint32_t m_step,
                                         uint64_t seed,
                                         struct HmmselFamily **out);

/**
 * Reads an estimator family from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer location.
 */
enum HmmselStatus hmmsel_family_read_json(const char *path, struct HmmselFamily **out);

/**
 * Writes an estimator family to a JSON file.
 *
 * # Safety
 * `family` must come from this library; `path` must be NUL-terminated.
 */
enum HmmselStatus hmmsel_family_write_json(const struct HmmselFamily *family, const char *path);

/**
 * Frees a family handle; a null pointer is a no-op.
 *
 * # Safety
 * `family` must come from this library and not be used afterwards.
 */
void hmmsel_family_free(struct HmmselFamily *family);

/**
 * Number of hidden states (0 for a null handle).
 *
 * # Safety
 * `family` must come from this library.
 */
size_t hmmsel_family_num_states(const struct HmmselFamily *family);

/**
 * Number of models in the family grid (0 for a null handle).
 *
 * # Safety
 * `family` must come from this library.
 */
size_t hmmsel_family_num_models(const struct HmmselFamily *family);

/**
 * Observation-triple count behind the family (0 for a null handle).
 *
 * # Safety
 * `family` must come from this library.
 */
size_t hmmsel_family_sample_size(const struct HmmselFamily *family);

/**
 * Copies the model dimensions into `out` (ascending).
 *
 * # Safety
 * `out` must point to `out_len` writable entries.
 */
enum HmmselStatus hmmsel_family_model_dims(const struct HmmselFamily *family,
                                           uint32_t *out,
                                           size_t out_len);

/**
 * Copies the emission coefficients of `state` in model `model_dim` into
 * `out` and stores the coefficient count in `written`.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles; `written` to one
 * writable size_t.
 */
enum HmmselStatus hmmsel_family_emission(const struct HmmselFamily *family,
                                         uint32_t model_dim,
                                         uint32_t state,
                                         double *out,
                                         size_t out_len,
                                         size_t *written);

/**
 * Calibrates the penalty by dimension jump and selects one model per
 * state; `m_hat_out` receives the selected dimensions and, when non-null,
 * `rho_out` the per-state penalty constants.
 *
 * # Safety
 * `m_hat_out` (and `rho_out` when non-null) must point to at least
 * `num_states` writable entries.
 */
enum HmmselStatus hmmsel_family_select(const struct HmmselFamily *family,
                                       enum HmmselVariant variant,
                                       enum HmmselCalibration calibration,
                                       uint32_t *m_hat_out,
                                       double *rho_out,
                                       size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HMM_SELECT_H */
