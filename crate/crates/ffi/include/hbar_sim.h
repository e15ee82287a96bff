#ifndef HBAR_SIM_H
#define HBAR_SIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HbarStatus {
  HBAR_STATUS_OK = 0,
  HBAR_STATUS_NULL_POINTER = 1,
  HBAR_STATUS_INVALID_ARGUMENT = 2,
  HBAR_STATUS_PARSE = 3,
  HBAR_STATUS_VALIDATION = 4,
  HBAR_STATUS_OUT_OF_RANGE = 5,
  HBAR_STATUS_RUNTIME = 6,
  HBAR_STATUS_IO = 7,
  HBAR_STATUS_PANIC = 8,
} HbarStatus;

/**
 * A device description.
 */
typedef struct HbarDevice HbarDevice;

/**
 * Eigenfrequencies along a spectroscopy sweep.
 */
typedef struct HbarEigencurves HbarEigencurves;

/**
 * Excited-state populations on an offset × duration grid.
 */
typedef struct HbarGrid HbarGrid;

/**
 * Run options for the time-domain experiments.
 */
typedef struct HbarOptions {
  /**
   * Nonzero for the master equation with device losses.
   */
  int32_t decoherence;
  uint32_t parallelism;
  double steps_per_cycle;
  double fsr_multiple;
} HbarOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hbar_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next library call on this thread.
 */
const char *hbar_last_error(void);

/**
 * Defaults: decoherence on, one thread, 100 steps per cycle, ±2 FSR.
 */
struct HbarOptions hbar_options_default(void);

enum HbarStatus hbar_device_reference(struct HbarDevice **out_device);

/**
 * Parses a JSON device document. With `lenient` nonzero unknown keys are
 * ignored instead of rejected.
 */
enum HbarStatus hbar_device_from_json(const char *json,
                                      int32_t lenient,
                                      struct HbarDevice **out_device);

/**
 * Serializes a device; release the string with [`hbar_string_free`].
 */
enum HbarStatus hbar_device_to_json(const struct HbarDevice *device, char **out_json);

void hbar_device_free(struct HbarDevice *device);

void hbar_string_free(char *s);

/**
 * Duration (µs) of a full swap of `qubit` with the mode `mode_label`, or
 * with the other qubit when `mode_label` is null.
 */
enum HbarStatus hbar_calibrate_swap(const struct HbarDevice *device,
                                    uint32_t qubit,
                                    const char *mode_label,
                                    double *out_duration_us);

/**
 * Chevron scan of `qubit`. `options` may be null for the defaults.
 */
enum HbarStatus hbar_chevron(const struct HbarDevice *device,
                             uint32_t qubit,
                             const double *offsets_mhz,
                             size_t n_offsets,
                             const double *durations_us,
                             size_t n_durations,
                             const struct HbarOptions *options,
                             struct HbarGrid **out_grid);

/**
 * Swap transfer through `mode_label` (null for the default transfer mode)
 * followed by a chevron on qubit 2.
 */
enum HbarStatus hbar_transfer(const struct HbarDevice *device,
                              const char *mode_label,
                              const double *offsets_mhz,
                              size_t n_offsets,
                              const double *durations_us,
                              size_t n_durations,
                              const struct HbarOptions *options,
                              struct HbarGrid **out_grid);

enum HbarStatus hbar_grid_shape(const struct HbarGrid *grid,
                                size_t *out_offsets,
                                size_t *out_durations);

/**
 * Copies the populations row-major (offset-major) into `buffer`, which must
 * hold `n_offsets * n_durations` values.
 */
enum HbarStatus hbar_grid_values(const struct HbarGrid *grid, double *buffer, size_t len);

enum HbarStatus hbar_grid_get(const struct HbarGrid *grid,
                              size_t offset_index,
                              size_t duration_index,
                              double *out_value);

/**
 * Writes the grid as CSV; release the string with [`hbar_string_free`].
 */
enum HbarStatus hbar_grid_to_csv(const struct HbarGrid *grid, char **out_csv);

void hbar_grid_free(struct HbarGrid *grid);

/**
 * Sweeps `qubit` over `n_points` frequencies in `[lo_ghz, hi_ghz]`.
 */
enum HbarStatus hbar_spectroscopy(const struct HbarDevice *device,
                                  uint32_t qubit,
                                  double lo_ghz,
                                  double hi_ghz,
                                  size_t n_points,
                                  struct HbarEigencurves **out_curves);

enum HbarStatus hbar_eigencurves_shape(const struct HbarEigencurves *curves,
                                       size_t *out_points,
                                       size_t *out_levels);

/**
 * Copies the lab-frame eigenfrequencies (GHz, ascending per point) row-major
 * into `buffer` of `points * levels` values.
 */
enum HbarStatus hbar_eigencurves_values(const struct HbarEigencurves *curves,
                                        double *buffer,
                                        size_t len);

enum HbarStatus hbar_eigencurves_anticrossing_count(const struct HbarEigencurves *curves,
                                                    size_t *out_count);

/**
 * Position (GHz) and splitting (MHz) of anticrossing `index`.
 */
enum HbarStatus hbar_eigencurves_anticrossing(const struct HbarEigencurves *curves,
                                              size_t index,
                                              double *out_freq_ghz,
                                              double *out_gap_mhz);

void hbar_eigencurves_free(struct HbarEigencurves *curves);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HBAR_SIM_H */
