#ifndef PHASEMIX_H
#define PHASEMIX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_CONFIG = 3,
  PM_STATUS_OUT_OF_RANGE = 4,
  PM_STATUS_NO_CONVERGENCE = 5,
  PM_STATUS_VERIFICATION_FAILED = 6,
  PM_STATUS_NUMERICAL = 7,
  PM_STATUS_IO = 8,
  PM_STATUS_PANIC = 9,
} PmStatus;

typedef enum PmKind {
  PM_KIND_DENSITY = 0,
  PM_KIND_DENSITY_RATE = 1,
  PM_KIND_FORCE = 2,
  PM_KIND_POTENTIAL_RATE = 3,
} PmKind;

// Steady state, orbit table and initial angle field of one configuration.
typedef struct PmExperiment PmExperiment;

// A probe evaluator for one observable at one radius.
typedef struct PmProbe PmProbe;

// A self-consistent steady state.
typedef struct PmSteady PmSteady;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *pm_last_error(void);

// # Safety
// `s` must come from this library or be NULL.
void pm_string_free(char *s);

// Steady state of the one-dimensional model with fixed angular momentum `lbar`.
//
// # Safety
// `out` must be valid for writing a pointer.
enum PmStatus pm_steady_new_one_dim(double k,
                                    double e0,
                                    double lbar,
                                    double mass,
                                    double eps,
                                    struct PmSteady **out);

// Steady state of the radial model with L ≥ `l0`.
//
// # Safety
// `out` must be valid for writing a pointer.
enum PmStatus pm_steady_new_radial(double k,
                                   double ell,
                                   double e0,
                                   double l0,
                                   double mass,
                                   double eps,
                                   struct PmSteady **out);

// # Safety
// `h` must come from a `pm_steady_new_*` call or be NULL.
void pm_steady_free(struct PmSteady *h);

// Inner and outer edge of the support.
//
// # Safety
// `h` must be a live handle and the out pointers valid.
enum PmStatus pm_steady_support(const struct PmSteady *h, double *rmin, double *rmax);

// Effective potential Ψ_L(r).
//
// # Safety
// `h` must be a live handle and `out` valid.
enum PmStatus pm_steady_psi(const struct PmSteady *h, double l, double r, double *out);

// Radial period T(E, L).
//
// # Safety
// `h` must be a live handle and `out` valid.
enum PmStatus pm_period(const struct PmSteady *h, double e, double l, double *out);

// Angle θ(R, E, L) ∈ [0, 1/2] at which the outgoing orbit passes R.
//
// # Safety
// `h` must be a live handle and `out` valid.
enum PmStatus pm_angle_of_radius(const struct PmSteady *h,
                                 double r,
                                 double e,
                                 double l,
                                 double *out);

// Loads a configuration file and builds its steady state, orbit table and
// initial angle field.
//
// # Safety
// `config_path` must be a NUL-terminated string and `out` valid.
enum PmStatus pm_experiment_load(const char *config_path, struct PmExperiment **out);

// # Safety
// `h` must come from `pm_experiment_load` or be NULL.
void pm_experiment_free(struct PmExperiment *h);

// Runs the verification suite; `passed` is 1 when the configuration may be
// used for decay runs, and `report_json` receives the full report.
//
// # Safety
// `h` must be a live handle; out pointers valid.
enum PmStatus pm_experiment_verify(const struct PmExperiment *h,
                                   int32_t *passed,
                                   char **report_json);

// Prepares the evaluator of one observable at radius `r`.
//
// # Safety
// `h` must be a live handle and `out` valid.
enum PmStatus pm_probe_new(const struct PmExperiment *h,
                           enum PmKind kind,
                           double r,
                           struct PmProbe **out);

// # Safety
// `h` must come from `pm_probe_new` or be NULL.
void pm_probe_free(struct PmProbe *h);

// Values at `n` times.
//
// # Safety
// `h` must be a live handle; `times` and `out` must hold `n` doubles.
enum PmStatus pm_probe_eval(const struct PmProbe *h, const double *times, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHASEMIX_H */
