#ifndef HDRCAL_H
#define HDRCAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum HdrcalStatus {
  HDRCAL_STATUS_OK = 0,
  HDRCAL_STATUS_NULL_POINTER = 1,
  HDRCAL_STATUS_INVALID_ARGUMENT = 2,
  HDRCAL_STATUS_IO = 3,
  HDRCAL_STATUS_CONFIG = 4,
  HDRCAL_STATUS_SENSOR = 5,
  HDRCAL_STATUS_CALIBRATION = 6,
  /**
   * The requested exposures fall outside what the sensor can do.
   */
  HDRCAL_STATUS_INFEASIBLE = 7,
  HDRCAL_STATUS_FUSION = 8,
  HDRCAL_STATUS_PANIC = 99,
} HdrcalStatus;

/**
 * Weighting used by [`hdrcal_weight`].
 */
typedef enum HdrcalWeighting {
  HDRCAL_WEIGHTING_SLOPE_WEIGHT = 0,
  HDRCAL_WEIGHTING_HAT = 1,
  HDRCAL_WEIGHTING_SNR = 2,
  HDRCAL_WEIGHTING_GAUSSIAN_TIME = 3,
} HdrcalWeighting;

/**
 * Measured camera response table.
 */
typedef struct HdrcalCrf HdrcalCrf;

/**
 * Linear output window of a CRF.
 */
typedef struct HdrcalLinearRange HdrcalLinearRange;

/**
 * Exposure times planned for a design range.
 */
typedef struct HdrcalPlan HdrcalPlan;

/**
 * Simulated camera.
 */
typedef struct HdrcalSensor HdrcalSensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *hdrcal_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *hdrcal_status_name(enum HdrcalStatus status);

/**
 * The shipped camera model. Never null.
 */
struct HdrcalSensor *hdrcal_sensor_default(void);

/**
 * Reads a `key = value` sensor file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum HdrcalStatus hdrcal_sensor_load(const char *path, struct HdrcalSensor **out_sensor);

/**
 * # Safety
 * `sensor` must be null or come from this library and not be freed twice.
 */
void hdrcal_sensor_free(struct HdrcalSensor *sensor);

/**
 * Mean output in counts for `irradiance` integrated over `t` seconds.
 *
 * # Safety
 * `sensor` must be a live handle and `out_value` writable.
 */
enum HdrcalStatus hdrcal_sensor_mean_response(const struct HdrcalSensor *sensor,
                                              double irradiance,
                                              double t,
                                              double *out_value);

/**
 * Shortest and longest exposure the sensor accepts, seconds.
 *
 * # Safety
 * `sensor` must be a live handle; both outputs writable.
 */
enum HdrcalStatus hdrcal_sensor_exposure_limits(const struct HdrcalSensor *sensor,
                                                double *out_min,
                                                double *out_max);

/**
 * Parses a CRF table from CSV text as written by `hdrcal calibrate`.
 *
 * # Safety
 * `csv` must be NUL-terminated and `out_crf` writable.
 */
enum HdrcalStatus hdrcal_crf_from_csv(const char *csv, struct HdrcalCrf **out_crf);

/**
 * Reads a CRF table file (`crf.csv`).
 *
 * # Safety
 * `path` must be NUL-terminated and `out_crf` writable.
 */
enum HdrcalStatus hdrcal_crf_load(const char *path, struct HdrcalCrf **out_crf);

/**
 * # Safety
 * `crf` must be null or come from this library and not be freed twice.
 */
void hdrcal_crf_free(struct HdrcalCrf *crf);

/**
 * Number of patch entries in the table, 0 for a null handle.
 *
 * # Safety
 * `crf` must be null or a live handle.
 */
size_t hdrcal_crf_len(const struct HdrcalCrf *crf);

/**
 * Scaled irradiance for output value `v`.
 *
 * # Safety
 * `crf` must be a live handle and `out_irradiance` writable.
 */
enum HdrcalStatus hdrcal_crf_invert(const struct HdrcalCrf *crf, double v, double *out_irradiance);

/**
 * Finds the linear output window of `crf`.
 *
 * # Safety
 * `crf` must be a live handle and `out_range` writable.
 */
enum HdrcalStatus hdrcal_linear_range_extract(const struct HdrcalCrf *crf,
                                              double slope_tolerance,
                                              struct HdrcalLinearRange **out_range);

/**
 * Reads a `linear_range.txt` file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out_range` writable.
 */
enum HdrcalStatus hdrcal_linear_range_load(const char *path, struct HdrcalLinearRange **out_range);

/**
 * # Safety
 * `range` must be null or come from this library and not be freed twice.
 */
void hdrcal_linear_range_free(struct HdrcalLinearRange *range);

/**
 * Window bounds in counts and its width in dB. Any output may be null.
 *
 * # Safety
 * `range` must be a live handle; non-null outputs must be writable.
 */
enum HdrcalStatus hdrcal_linear_range_get(const struct HdrcalLinearRange *range,
                                          double *out_v_max,
                                          double *out_v_min,
                                          double *out_ldr_e);

/**
 * Plans the fewest exposures covering `hdr_d` dB, starting at `t1`.
 *
 * # Safety
 * `out_plan` must be writable.
 */
enum HdrcalStatus hdrcal_plan_exposures(double hdr_d,
                                        double ldr_e,
                                        double t1,
                                        double t_min,
                                        double t_max,
                                        struct HdrcalPlan **out_plan);

/**
 * # Safety
 * `plan` must be null or come from this library and not be freed twice.
 */
void hdrcal_plan_free(struct HdrcalPlan *plan);

/**
 * Number of exposures, 0 for a null handle.
 *
 * # Safety
 * `plan` must be null or a live handle.
 */
size_t hdrcal_plan_len(const struct HdrcalPlan *plan);

/**
 * Exposure `index` in seconds, shortest first.
 *
 * # Safety
 * `plan` must be a live handle and `out_time` writable.
 */
enum HdrcalStatus hdrcal_plan_time(const struct HdrcalPlan *plan, size_t index, double *out_time);

/**
 * Weight of output value `z` under `scheme`, for a sensor of the CRF's bit
 * depth. `crf` is only read by the slope and SNR schemes but is always
 * required.
 *
 * # Safety
 * `crf` must be a live handle and `out_weight` writable.
 */
enum HdrcalStatus hdrcal_weight(enum HdrcalWeighting scheme,
                                double z,
                                const struct HdrcalCrf *crf,
                                double *out_weight);

/**
 * Fuses `n_frames` row-major frames of `width * height` samples, taken at
 * `times` seconds, into `out_radiance` (same size, longest exposure's
 * scale). `out_validity` may be null; otherwise it receives the number of
 * frames used per pixel.
 *
 * # Safety
 * `frames` must point to `n_frames` pointers of `width * height` samples
 * each, `times` to `n_frames` doubles, and the outputs to `width * height`
 * writable elements.
 */
enum HdrcalStatus hdrcal_fuse(const uint16_t *const *frames,
                              const double *times,
                              size_t n_frames,
                              size_t width,
                              size_t height,
                              const struct HdrcalCrf *crf,
                              const struct HdrcalLinearRange *range,
                              double *out_radiance,
                              uint8_t *out_validity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDRCAL_H */
