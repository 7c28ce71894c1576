/* SPDX-License-Identifier: Apache-2.0 */

#ifndef QDMSIM_H
#define QDMSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QdmStatus {
  QDM_STATUS_OK = 0,
  QDM_STATUS_DOMAIN = 1,
  QDM_STATUS_OUT_OF_RANGE = 2,
  QDM_STATUS_EXTRACTION = 3,
  QDM_STATUS_UNDERDETERMINED = 4,
  QDM_STATUS_INDEX = 5,
  QDM_STATUS_CONFIG = 6,
  QDM_STATUS_USAGE = 7,
  QDM_STATUS_IO = 8,
  QDM_STATUS_NULL_POINTER = 9,
  QDM_STATUS_INVALID_UTF8 = 10,
  QDM_STATUS_PANIC = 11,
} QdmStatus;

typedef enum QdmProtocol {
  QDM_PROTOCOL_LCQDM = 0,
  QDM_PROTOCOL_LEIBOLD = 1,
  QDM_PROTOCOL_CONVENTIONAL = 2,
} QdmProtocol;

// Opaque parsed run configuration.
typedef struct QdmConfig QdmConfig;

// Opaque photophysics model.
typedef struct QdmModel QdmModel;

// Opaque scan plan.
typedef struct QdmPlan QdmPlan;

// Protocol timings in microseconds.
typedef struct QdmProtocolParams {
  double t_init_ls;
  double t_init_conf;
  double t_ro_conf;
  double t_mw;
  double t_d;
  double t1;
} QdmProtocolParams;

typedef struct QdmSensitivity {
  double eta_lcqdm;
  double eta_leibold;
  double eta_conventional;
  double ratio_leibold_over_lc;
  double ratio_conv_over_lc;
} QdmSensitivity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failing call on this thread; empty after success.
// Valid until the next call into this library on the same thread.
const char *qdm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *qdm_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a pointer obtained from this library, not yet freed.
void qdm_string_free(char *s);

// The recurrent-readout prefactor 2 / (1 + e^-1).
double qdm_recurrent_prefactor(void);

// Sensitivity of one protocol in units of sqrt(us) per unit SNR.
//
// # Safety
// `params` must be valid for reads and `out` valid for writes.
enum QdmStatus qdm_eta(const struct QdmProtocolParams *params,
                       enum QdmProtocol protocol,
                       double *out);

// All three sensitivities and their ratios.
//
// # Safety
// `params` must be valid for reads and `out` valid for writes.
enum QdmStatus qdm_evaluate(const struct QdmProtocolParams *params, struct QdmSensitivity *out);

// Readouts sharing one MW block.
//
// # Safety
// `params` must be valid for reads and `out` valid for writes.
enum QdmStatus qdm_readouts_per_cycle(const struct QdmProtocolParams *params,
                                      enum QdmProtocol protocol,
                                      size_t *out);

// The built-in synthetic photophysics model.
struct QdmModel *qdm_model_new_default(void);

// Model from explicit coefficients; validated before return.
//
// # Safety
// `out` must be valid for writes.
enum QdmStatus qdm_model_new(double init_a,
                             double init_b,
                             double init_c,
                             double ro_a,
                             double ro_b,
                             double ro_c,
                             double i_sat,
                             double r_max,
                             double c0,
                             double i_min,
                             double i_max,
                             struct QdmModel **out);

// # Safety
// `model` must be null or a handle from this library, not yet freed.
void qdm_model_free(struct QdmModel *model);

// Initialization time (us) at `intensity` (mW/um2).
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum QdmStatus qdm_model_init_time(const struct QdmModel *model, double intensity, double *out);

// Readout time (us) at `intensity` (mW/um2).
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum QdmStatus qdm_model_readout_time(const struct QdmModel *model, double intensity, double *out);

// Parses configuration text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` valid for writes.
enum QdmStatus qdm_config_parse(const char *text, struct QdmConfig **out);

// # Safety
// `config` must be null or a handle from this library, not yet freed.
void qdm_config_free(struct QdmConfig *config);

// Protocol timings at the configured operating point.
//
// # Safety
// `config` must be a live handle and `out` valid for writes.
enum QdmStatus qdm_config_protocol_params(const struct QdmConfig *config,
                                          struct QdmProtocolParams *out);

// Canonical text form of the configuration; free with [`qdm_string_free`].
//
// # Safety
// `config` must be a live handle and `out` valid for writes.
enum QdmStatus qdm_config_to_text(const struct QdmConfig *config, char **out);

// Copy of the configured photophysics model.
//
// # Safety
// `config` must be a live handle and `out` valid for writes.
enum QdmStatus qdm_config_model(const struct QdmConfig *config, struct QdmModel **out);

// Plans a raster acquisition of an `nx` x `ny` x `nz` grid.
//
// `t_z_step` < 0 selects the default (the in-plane dead time).
//
// # Safety
// `params` must be valid for reads and `out` valid for writes.
enum QdmStatus qdm_plan_new(size_t nx,
                            size_t ny,
                            size_t nz,
                            double pitch_xy,
                            double pitch_z,
                            const struct QdmProtocolParams *params,
                            enum QdmProtocol protocol,
                            double t_z_step,
                            struct QdmPlan **out);

// # Safety
// `plan` must be null or a handle from this library, not yet freed.
void qdm_plan_free(struct QdmPlan *plan);

// Total acquisition time in microseconds.
//
// # Safety
// `plan` must be a live handle and `out` valid for writes.
enum QdmStatus qdm_plan_total_time(const struct QdmPlan *plan, double *out);

// # Safety
// `plan` must be a live handle and `out` valid for writes.
enum QdmStatus qdm_plan_cycle_count(const struct QdmPlan *plan, size_t *out);

// Cycle schedule as CSV; free with [`qdm_string_free`].
//
// # Safety
// `plan` must be a live handle and `out` valid for writes.
enum QdmStatus qdm_plan_cycles_csv(const struct QdmPlan *plan, char **out);

// Monte Carlo sensitivity estimate with Poisson counting.
//
// # Safety
// `params` and `model` must be valid for reads; `eta` and `stderr_out`
// valid for writes.
enum QdmStatus qdm_simulate(const struct QdmProtocolParams *params,
                            const struct QdmModel *model,
                            double i_conf,
                            size_t n_trials,
                            uint64_t seed,
                            enum QdmProtocol protocol,
                            double *eta,
                            double *stderr_out);

// Extracts readout and initialization times (us) from a trace of `n`
// samples; contrast is window-averaged.
//
// # Safety
// The three arrays must hold `n` readable values; `t_ro` and `t_init`
// must be valid for writes.
enum QdmStatus qdm_extract_times(const double *t_sweep,
                                 const double *sig_pl,
                                 const double *ref_pl,
                                 size_t n,
                                 double intensity,
                                 double *t_ro,
                                 double *t_init);

// Least-squares log-quadratic fit of `n` (intensity, duration) points.
// Writes `a`, `b`, `c` to `coeffs[0..3]`.
//
// # Safety
// Both arrays must hold `n` readable values; `coeffs` must be valid for
// three writes.
enum QdmStatus qdm_fit_log_quadratic(const double *intensity,
                                     const double *duration,
                                     size_t n,
                                     double *coeffs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDMSIM_H */
