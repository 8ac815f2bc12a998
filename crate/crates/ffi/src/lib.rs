//! C ABI over `hdrcal`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! call returns an [`HdrcalStatus`]; on failure the message is kept per
//! thread and read back with [`hdrcal_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hdrcal::baselines::{self, Variant, WeightingScheme};
use hdrcal::calibration::{self, CrfTable, LinearRange};
use hdrcal::fusion::{self, ExposurePlan, FusionError};
use hdrcal::io::{self, KeyValues};
use hdrcal::sensor::{self, SensorConfig, SensorError};
use hdrcal::RawImage;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdrcalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Config = 4,
    Sensor = 5,
    Calibration = 6,
    /// The requested exposures fall outside what the sensor can do.
    Infeasible = 7,
    Fusion = 8,
    Panic = 99,
}

/// Weighting used by [`hdrcal_weight`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdrcalWeighting {
    SlopeWeight = 0,
    Hat = 1,
    Snr = 2,
    GaussianTime = 3,
}

impl From<HdrcalWeighting> for Variant {
    fn from(w: HdrcalWeighting) -> Self {
        match w {
            HdrcalWeighting::SlopeWeight => Variant::SlopeWeight,
            HdrcalWeighting::Hat => Variant::Hat,
            HdrcalWeighting::Snr => Variant::Snr,
            HdrcalWeighting::GaussianTime => Variant::GaussianTime,
        }
    }
}

/// Simulated camera.
pub struct HdrcalSensor(SensorConfig);
/// Measured camera response table.
pub struct HdrcalCrf(CrfTable);
/// Linear output window of a CRF.
pub struct HdrcalLinearRange(LinearRange);
/// Exposure times planned for a design range.
pub struct HdrcalPlan(ExposurePlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(HdrcalStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(HdrcalStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Failure(HdrcalStatus::InvalidArgument, msg.into())
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        let status = match e {
            io::IoError::Config(_) => HdrcalStatus::Config,
            _ => HdrcalStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<io::ConfigError> for Failure {
    fn from(e: io::ConfigError) -> Self {
        Failure(HdrcalStatus::Config, e.to_string())
    }
}

impl From<SensorError> for Failure {
    fn from(e: SensorError) -> Self {
        let status = match e {
            SensorError::ExposureOutOfRange { .. } => HdrcalStatus::Infeasible,
            SensorError::InvalidConfig(_) => HdrcalStatus::Config,
            _ => HdrcalStatus::Sensor,
        };
        Failure(status, e.to_string())
    }
}

impl From<calibration::CalibrationError> for Failure {
    fn from(e: calibration::CalibrationError) -> Self {
        Failure(HdrcalStatus::Calibration, e.to_string())
    }
}

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        let status = if e.is_infeasible() {
            HdrcalStatus::Infeasible
        } else {
            match e {
                FusionError::Invalid(_) | FusionError::PlanMismatch(_) => HdrcalStatus::InvalidArgument,
                _ => HdrcalStatus::Fusion,
            }
        };
        Failure(status, e.to_string())
    }
}

impl From<hdrcal::image::ImageError> for Failure {
    fn from(e: hdrcal::image::ImageError) -> Self {
        Failure::invalid(e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HdrcalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            HdrcalStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HdrcalStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn hdrcal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn hdrcal_status_name(status: HdrcalStatus) -> *const c_char {
    let s: &'static CStr = match status {
        HdrcalStatus::Ok => c"ok",
        HdrcalStatus::NullPointer => c"null pointer",
        HdrcalStatus::InvalidArgument => c"invalid argument",
        HdrcalStatus::Io => c"i/o error",
        HdrcalStatus::Config => c"config error",
        HdrcalStatus::Sensor => c"sensor error",
        HdrcalStatus::Calibration => c"calibration error",
        HdrcalStatus::Infeasible => c"infeasible",
        HdrcalStatus::Fusion => c"fusion error",
        HdrcalStatus::Panic => c"panic",
    };
    s.as_ptr()
}

// Sensor

/// The shipped camera model. Never null.
#[no_mangle]
pub extern "C" fn hdrcal_sensor_default() -> *mut HdrcalSensor {
    boxed(HdrcalSensor(sensor::default_sensor()))
}

/// Reads a `key = value` sensor file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_sensor_load(path: *const c_char, out_sensor: *mut *mut HdrcalSensor) -> HdrcalStatus {
    guard(|| {
        let dst = out(out_sensor, "out_sensor")?;
        let path = c_str(path, "path")?;
        let kv = KeyValues::parse(&io::read_text(Path::new(path))?)?;
        *dst = boxed(HdrcalSensor(SensorConfig::from_key_values(&kv)?));
        Ok(())
    })
}

/// # Safety
/// `sensor` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_sensor_free(sensor: *mut HdrcalSensor) {
    free(sensor)
}

/// Mean output in counts for `irradiance` integrated over `t` seconds.
///
/// # Safety
/// `sensor` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_sensor_mean_response(
    sensor: *const HdrcalSensor,
    irradiance: f64,
    t: f64,
    out_value: *mut f64,
) -> HdrcalStatus {
    guard(|| {
        let s = deref(sensor, "sensor")?;
        let dst = out(out_value, "out_value")?;
        *dst = sensor::mean_response(&s.0, irradiance, t)?;
        Ok(())
    })
}

/// Shortest and longest exposure the sensor accepts, seconds.
///
/// # Safety
/// `sensor` must be a live handle; both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_sensor_exposure_limits(
    sensor: *const HdrcalSensor,
    out_min: *mut f64,
    out_max: *mut f64,
) -> HdrcalStatus {
    guard(|| {
        let s = deref(sensor, "sensor")?;
        let (lo, hi) = s.0.exposure_limits;
        *out(out_min, "out_min")? = lo;
        *out(out_max, "out_max")? = hi;
        Ok(())
    })
}

// CRF

/// Parses a CRF table from CSV text as written by `hdrcal calibrate`.
///
/// # Safety
/// `csv` must be NUL-terminated and `out_crf` writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_crf_from_csv(csv: *const c_char, out_crf: *mut *mut HdrcalCrf) -> HdrcalStatus {
    guard(|| {
        let dst = out(out_crf, "out_crf")?;
        let table = CrfTable::from_csv(c_str(csv, "csv")?)?;
        *dst = boxed(HdrcalCrf(table));
        Ok(())
    })
}

/// Reads a CRF table file (`crf.csv`).
///
/// # Safety
/// `path` must be NUL-terminated and `out_crf` writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_crf_load(path: *const c_char, out_crf: *mut *mut HdrcalCrf) -> HdrcalStatus {
    guard(|| {
        let dst = out(out_crf, "out_crf")?;
        let text = io::read_text(Path::new(c_str(path, "path")?))?;
        *dst = boxed(HdrcalCrf(CrfTable::from_csv(&text)?));
        Ok(())
    })
}

/// # Safety
/// `crf` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_crf_free(crf: *mut HdrcalCrf) {
    free(crf)
}

/// Number of patch entries in the table, 0 for a null handle.
///
/// # Safety
/// `crf` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_crf_len(crf: *const HdrcalCrf) -> usize {
    crf.as_ref().map_or(0, |c| c.0.entries.len())
}

/// Scaled irradiance for output value `v`.
///
/// # Safety
/// `crf` must be a live handle and `out_irradiance` writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_crf_invert(crf: *const HdrcalCrf, v: f64, out_irradiance: *mut f64) -> HdrcalStatus {
    guard(|| {
        let c = deref(crf, "crf")?;
        let dst = out(out_irradiance, "out_irradiance")?;
        if !v.is_finite() {
            return Err(Failure::invalid(format!("output value must be finite, got {v}")));
        }
        *dst = calibration::invert_crf(&c.0, v);
        Ok(())
    })
}

// Linear range

/// Finds the linear output window of `crf`.
///
/// # Safety
/// `crf` must be a live handle and `out_range` writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_linear_range_extract(
    crf: *const HdrcalCrf,
    slope_tolerance: f64,
    out_range: *mut *mut HdrcalLinearRange,
) -> HdrcalStatus {
    guard(|| {
        let c = deref(crf, "crf")?;
        let dst = out(out_range, "out_range")?;
        if !(slope_tolerance > 0.0 && slope_tolerance.is_finite()) {
            return Err(Failure::invalid(format!("slope tolerance must be > 0, got {slope_tolerance}")));
        }
        *dst = boxed(HdrcalLinearRange(calibration::extract_linear_range(&c.0, slope_tolerance)?));
        Ok(())
    })
}

/// Reads a `linear_range.txt` file.
///
/// # Safety
/// `path` must be NUL-terminated and `out_range` writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_linear_range_load(
    path: *const c_char,
    out_range: *mut *mut HdrcalLinearRange,
) -> HdrcalStatus {
    guard(|| {
        let dst = out(out_range, "out_range")?;
        let kv = KeyValues::parse(&io::read_text(Path::new(c_str(path, "path")?))?)?;
        *dst = boxed(HdrcalLinearRange(LinearRange::from_key_values(&kv)?));
        Ok(())
    })
}

/// # Safety
/// `range` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_linear_range_free(range: *mut HdrcalLinearRange) {
    free(range)
}

/// Window bounds in counts and its width in dB. Any output may be null.
///
/// # Safety
/// `range` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_linear_range_get(
    range: *const HdrcalLinearRange,
    out_v_max: *mut f64,
    out_v_min: *mut f64,
    out_ldr_e: *mut f64,
) -> HdrcalStatus {
    guard(|| {
        let r = &deref(range, "range")?.0;
        for (p, v) in [(out_v_max, r.v_max), (out_v_min, r.v_min), (out_ldr_e, r.ldr_e)] {
            if let Some(dst) = p.as_mut() {
                *dst = v;
            }
        }
        Ok(())
    })
}

// Planning

/// Plans the fewest exposures covering `hdr_d` dB, starting at `t1`.
///
/// # Safety
/// `out_plan` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_plan_exposures(
    hdr_d: f64,
    ldr_e: f64,
    t1: f64,
    t_min: f64,
    t_max: f64,
    out_plan: *mut *mut HdrcalPlan,
) -> HdrcalStatus {
    guard(|| {
        let dst = out(out_plan, "out_plan")?;
        *dst = boxed(HdrcalPlan(fusion::plan_exposures(hdr_d, ldr_e, t1, (t_min, t_max))?));
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_plan_free(plan: *mut HdrcalPlan) {
    free(plan)
}

/// Number of exposures, 0 for a null handle.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_plan_len(plan: *const HdrcalPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.n_images)
}

/// Exposure `index` in seconds, shortest first.
///
/// # Safety
/// `plan` must be a live handle and `out_time` writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_plan_time(plan: *const HdrcalPlan, index: usize, out_time: *mut f64) -> HdrcalStatus {
    guard(|| {
        let p = &deref(plan, "plan")?.0;
        let dst = out(out_time, "out_time")?;
        *dst = *p
            .exposure_times
            .get(index)
            .ok_or_else(|| Failure::invalid(format!("index {index} out of range for {} exposures", p.n_images)))?;
        Ok(())
    })
}

// Weights and fusion

/// Weight of output value `z` under `scheme`, for a sensor of the CRF's bit
/// depth. `crf` is only read by the slope and SNR schemes but is always
/// required.
///
/// # Safety
/// `crf` must be a live handle and `out_weight` writable.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_weight(
    scheme: HdrcalWeighting,
    z: f64,
    crf: *const HdrcalCrf,
    out_weight: *mut f64,
) -> HdrcalStatus {
    guard(|| {
        let c = &deref(crf, "crf")?.0;
        let dst = out(out_weight, "out_weight")?;
        if !z.is_finite() {
            return Err(Failure::invalid(format!("output value must be finite, got {z}")));
        }
        let s = WeightingScheme::new(scheme.into(), c.bit_depth);
        *dst = baselines::weight(&s, z, c);
        Ok(())
    })
}

/// Fuses `n_frames` row-major frames of `width * height` samples, taken at
/// `times` seconds, into `out_radiance` (same size, longest exposure's
/// scale). `out_validity` may be null; otherwise it receives the number of
/// frames used per pixel.
///
/// # Safety
/// `frames` must point to `n_frames` pointers of `width * height` samples
/// each, `times` to `n_frames` doubles, and the outputs to `width * height`
/// writable elements.
#[no_mangle]
pub unsafe extern "C" fn hdrcal_fuse(
    frames: *const *const u16,
    times: *const f64,
    n_frames: usize,
    width: usize,
    height: usize,
    crf: *const HdrcalCrf,
    range: *const HdrcalLinearRange,
    out_radiance: *mut f64,
    out_validity: *mut u8,
) -> HdrcalStatus {
    guard(|| {
        let c = &deref(crf, "crf")?.0;
        let r = &deref(range, "range")?.0;
        if frames.is_null() || times.is_null() {
            return Err(Failure::null("frames or times"));
        }
        if out_radiance.is_null() {
            return Err(Failure::null("out_radiance"));
        }
        if n_frames == 0 {
            return Err(Failure::invalid("need at least one frame"));
        }
        let len = width.checked_mul(height).filter(|&n| n > 0).ok_or_else(|| Failure::invalid("bad image size"))?;

        let frame_ptrs = std::slice::from_raw_parts(frames, n_frames);
        let times = std::slice::from_raw_parts(times, n_frames);
        let mut images = Vec::with_capacity(n_frames);
        for (k, (&p, &t)) in frame_ptrs.iter().zip(times).enumerate() {
            if p.is_null() {
                return Err(Failure::null(&format!("frame {k}")));
            }
            let samples = std::slice::from_raw_parts(p, len).to_vec();
            images.push(RawImage::new(width, height, c.bit_depth, t, samples)?);
        }

        let fused = baselines::proposed_with_n_images(&images, c, r)?;
        std::slice::from_raw_parts_mut(out_radiance, len).copy_from_slice(fused.radiance.values());
        if !out_validity.is_null() {
            std::slice::from_raw_parts_mut(out_validity, len).copy_from_slice(&fused.validity_count);
        }
        Ok(())
    })
}
