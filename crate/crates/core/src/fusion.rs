//! Minimal-exposure, weighting-free linear HDR fusion.
//!
//! With a measured linear window `[v_min, v_max]` spanning `LDR_E` dB, an
//! `HDR_D` dB scene needs `N = ceil(HDR_D / LDR_E)` exposures. The shortest
//! keeps the brightest zone at or below `v_max`; each next one is longer by
//! the factor `P_n`. Fusion keeps only samples inside the window, maps them
//! through the inverse CRF, rescales to the longest exposure and averages
//! whatever survives. No per-pixel weights are involved.

use thiserror::Error;

use crate::calibration::{CalibrationError, CrfInverse, CrfTable, LinearRange, ZoneProbe};
use crate::image::{IrradianceMap, RawImage};
use crate::sensor::{SensorConfig, SensorError};
use crate::target::PatchLayout;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("exposure plan infeasible: {0}")]
    PlanInfeasible(String),
    #[error("no admissible exposure: {0}")]
    Unreachable(String),
    #[error("images do not match the plan: {0}")]
    PlanMismatch(String),
    #[error("reference (0 dB) patch has zero mean radiance")]
    ZeroMean,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

impl FusionError {
    /// Failures caused by the scene/illumination falling outside what the
    /// camera can cover, as opposed to bad inputs.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Self::PlanInfeasible(_) | Self::Unreachable(_))
            || matches!(self, Self::Calibration(CalibrationError::Unreachable(_)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposurePlan {
    pub hdr_d: f64,
    pub ldr_e: f64,
    pub n_images: usize,
    /// `T_1..T_N`, seconds, ascending.
    pub exposure_times: Vec<f64>,
    /// `P_2..P_N`.
    pub factors: Vec<f64>,
}

/// Which exposure of the plan is pinned by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanAnchor {
    /// `T_1` from the brightest zone (calibrated targets).
    #[default]
    Shortest,
    /// `T_N` from the darkest zone, earlier exposures divided back
    /// (uncalibrated natural scenes).
    Longest,
}

fn plan_factors(hdr_d: f64, ldr_e: f64) -> Result<(usize, Vec<f64>), FusionError> {
    if !(hdr_d > 0.0 && ldr_e > 0.0 && hdr_d.is_finite() && ldr_e.is_finite()) {
        return Err(FusionError::Invalid(format!("hdr_d={hdr_d}, ldr_e={ldr_e} must be > 0")));
    }
    let n = ((hdr_d / ldr_e) - 1e-9).ceil().max(1.0) as usize;
    let mut factors = vec![10f64.powf(ldr_e / 20.0); n - 1];
    if n >= 2 {
        factors[n - 2] = 10f64.powf((hdr_d - (n as f64 - 1.0) * ldr_e) / 20.0);
    }
    Ok((n, factors))
}

pub fn plan_exposures(hdr_d: f64, ldr_e: f64, t1: f64, limits: (f64, f64)) -> Result<ExposurePlan, FusionError> {
    plan_exposures_anchored(hdr_d, ldr_e, t1, PlanAnchor::Shortest, limits)
}

pub fn plan_exposures_anchored(
    hdr_d: f64,
    ldr_e: f64,
    anchor_time: f64,
    anchor: PlanAnchor,
    limits: (f64, f64),
) -> Result<ExposurePlan, FusionError> {
    let (n, factors) = plan_factors(hdr_d, ldr_e)?;
    let mut times = vec![anchor_time; n];
    match anchor {
        PlanAnchor::Shortest => {
            for k in 1..n {
                times[k] = times[k - 1] * factors[k - 1];
            }
        }
        PlanAnchor::Longest => {
            for k in (0..n - 1).rev() {
                times[k] = times[k + 1] / factors[k];
            }
        }
    }
    let (lo, hi) = limits;
    let slack = 1e-9;
    if let Some(t) = times.iter().find(|&&t| !(t >= lo * (1.0 - slack) && t <= hi * (1.0 + slack))) {
        return Err(FusionError::PlanInfeasible(format!(
            "exposure {t:.6e} s outside sensor limits [{lo:.3e}, {hi:.3e}] s; \
             the illumination is outside the band this camera can cover with {n} exposures"
        )));
    }
    Ok(ExposurePlan { hdr_d, ldr_e, n_images: n, exposure_times: times, factors })
}

/// Relative resolution of the `T_1` search.
const T1_SEARCH_TOLERANCE: f64 = 1e-4;

/// Longest exposure keeping the brightest (0 dB) zone mean at or below
/// `v_max`.
pub fn choose_t1(
    cfg: &SensorConfig,
    scene: &IrradianceMap,
    layout: &PatchLayout,
    lr: &LinearRange,
) -> Result<f64, FusionError> {
    let probe = ZoneProbe::reference(cfg, scene, layout)?;
    let (t_min, t_max) = cfg.exposure_limits;
    let v_short = probe.mean(t_min)?;
    if v_short > lr.v_max {
        return Err(FusionError::Unreachable(format!(
            "brightest zone reads v_B = {v_short:.1} > v_max = {:.1} even at the shortest \
             exposure {t_min:.3e} s; illumination too high for linear capture",
            lr.v_max
        )));
    }
    if probe.mean(t_max)? <= lr.v_max {
        return Ok(t_max);
    }
    let (mut lo, mut hi) = (t_min, t_max);
    while hi / lo > 1.0 + T1_SEARCH_TOLERANCE {
        let mid = (lo * hi).sqrt();
        if probe.mean(mid)? <= lr.v_max {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Shortest exposure lifting the darkest zone to at least `v_min`, for
/// plans anchored on their longest exposure.
pub fn choose_tn(
    cfg: &SensorConfig,
    scene: &IrradianceMap,
    layout: &PatchLayout,
    lr: &LinearRange,
) -> Result<f64, FusionError> {
    let darkest = layout
        .patches
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.design_db.total_cmp(&b.1.design_db))
        .map(|(k, _)| k)
        .ok_or_else(|| FusionError::Invalid("layout has no patches".into()))?;
    let probe = ZoneProbe::patch(cfg, scene, layout, darkest)?;
    let (t_min, t_max) = cfg.exposure_limits;
    if probe.mean(t_max)? < lr.v_min {
        return Err(FusionError::PlanInfeasible(format!(
            "darkest zone stays below v_min = {:.1} at the longest exposure {t_max:.3e} s; \
             illumination too low for linear capture",
            lr.v_min
        )));
    }
    if probe.mean(t_min)? >= lr.v_min {
        return Ok(t_min);
    }
    let (mut lo, mut hi) = (t_min, t_max);
    while hi / lo > 1.0 + T1_SEARCH_TOLERANCE {
        let mid = (lo * hi).sqrt();
        if probe.mean(mid)? >= lr.v_min {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Sentinel {
    Ok = 0,
    ClampedBright = 1,
    ClampedDark = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// Scaled irradiance on the longest exposure's scale.
    pub radiance: IrradianceMap,
    /// Exposures that contributed to each pixel.
    pub validity_count: Vec<u8>,
    pub sentinel_mask: Vec<Sentinel>,
}

impl FusionOutput {
    pub fn width(&self) -> usize {
        self.radiance.width()
    }

    pub fn height(&self) -> usize {
        self.radiance.height()
    }

    /// 8-bit log preview, `255 * log10(1 + I) / log10(1 + I_max)`.
    pub fn log_preview(&self) -> Vec<u8> {
        let max = self.radiance.max();
        let denom = (1.0 + max).log10();
        self.radiance
            .values()
            .iter()
            .map(|&v| if denom > 0.0 { (255.0 * (1.0 + v).log10() / denom).round() as u8 } else { 0 })
            .collect()
    }

    pub fn sentinel_bytes(&self) -> Vec<u8> {
        self.sentinel_mask.iter().map(|&s| s as u8).collect()
    }
}

pub(crate) fn check_ladder(images: &[RawImage]) -> Result<(), FusionError> {
    let first = images.first().ok_or_else(|| FusionError::PlanMismatch("no images".into()))?;
    for img in images {
        if (img.width(), img.height(), img.bit_depth()) != (first.width(), first.height(), first.bit_depth()) {
            return Err(FusionError::PlanMismatch("images differ in size or bit depth".into()));
        }
    }
    if images.windows(2).any(|w| w[1].exposure_time() <= w[0].exposure_time()) {
        return Err(FusionError::PlanMismatch("exposures must be strictly ascending".into()));
    }
    Ok(())
}

/// Weighting-free fusion of a planned exposure set.
pub fn fuse(
    images: &[RawImage],
    crf: &CrfTable,
    lr: &LinearRange,
    plan: &ExposurePlan,
) -> Result<FusionOutput, FusionError> {
    if images.len() != plan.n_images {
        return Err(FusionError::PlanMismatch(format!(
            "plan has {} exposures, got {} images",
            plan.n_images,
            images.len()
        )));
    }
    for (k, (img, &t)) in images.iter().zip(&plan.exposure_times).enumerate() {
        if (img.exposure_time() / t - 1.0).abs() > 0.01 {
            return Err(FusionError::PlanMismatch(format!(
                "image {k} exposed {} s, plan says {t} s",
                img.exposure_time()
            )));
        }
    }
    fuse_ladder(images, crf, lr)
}

/// The same validity filter and mean-of-valid rule over any ascending
/// exposure ladder.
pub fn fuse_ladder(images: &[RawImage], crf: &CrfTable, lr: &LinearRange) -> Result<FusionOutput, FusionError> {
    check_ladder(images)?;
    let inverse = crf.inverse();
    let first = &images[0];
    let last = &images[images.len() - 1];
    let t_ref = last.exposure_time();
    let scales: Vec<f64> = images.iter().map(|img| t_ref / img.exposure_time()).collect();
    let n = first.samples().len();

    let mut radiance = Vec::with_capacity(n);
    let mut validity = Vec::with_capacity(n);
    let mut sentinel = Vec::with_capacity(n);
    for i in 0..n {
        let (mut sum, mut count) = (0.0, 0u8);
        for (img, &scale) in images.iter().zip(&scales) {
            let v = img.samples()[i];
            let vf = f64::from(v);
            if vf >= lr.v_min && vf <= lr.v_max {
                sum += inverse.at_code(v) * scale;
                count += 1;
            }
        }
        if count > 0 {
            radiance.push(sum / f64::from(count));
            sentinel.push(Sentinel::Ok);
        } else {
            let short = f64::from(first.samples()[i]);
            let long = f64::from(last.samples()[i]);
            if long < lr.v_min && short <= lr.v_max {
                radiance.push(0.0);
                sentinel.push(Sentinel::ClampedDark);
            } else {
                // too bright for the window: best effort through the full
                // (nonlinear) CRF of the shortest exposure that overflowed
                let k = images.iter().position(|img| f64::from(img.samples()[i]) > lr.v_max).unwrap_or(0);
                let _ = short;
                radiance.push(inverse.at_code(images[k].samples()[i]) * scales[k]);
                sentinel.push(Sentinel::ClampedBright);
            }
        }
        validity.push(count);
    }
    Ok(FusionOutput {
        radiance: IrradianceMap::from_values_unchecked(first.width(), first.height(), radiance),
        validity_count: validity,
        sentinel_mask: sentinel,
    })
}

/// Inverse-CRF value of every sample of one image, rescaled by `scale`.
pub fn invert_image(img: &RawImage, inverse: &CrfInverse, scale: f64) -> IrradianceMap {
    let values = img.samples().iter().map(|&v| inverse.at_code(v) * scale).collect();
    IrradianceMap::from_values_unchecked(img.width(), img.height(), values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchDb {
    pub design_db: f64,
    /// `20 log10(mean(0 dB patch) / mean(patch))`; `+inf` for a zero mean.
    pub measured_db: f64,
}

impl PatchDb {
    pub fn abs_error(&self) -> f64 {
        (self.measured_db - self.design_db).abs()
    }
}

/// Spatially averaged dynamic range of every patch relative to the 0 dB one.
pub fn measure_patch_db(out: &FusionOutput, layout: &PatchLayout) -> Result<Vec<PatchDb>, FusionError> {
    measure_map_db(&out.radiance, layout)
}

/// [`measure_patch_db`] over any radiance map, including ground truth.
pub fn measure_map_db(map: &IrradianceMap, layout: &PatchLayout) -> Result<Vec<PatchDb>, FusionError> {
    let reference = layout.reference_patch().ok_or_else(|| FusionError::Invalid("layout has no 0 dB patch".into()))?;
    let means = layout
        .patches
        .iter()
        .map(|p| {
            if !p.fits(map.width(), map.height()) {
                return Err(FusionError::Invalid(format!("{} dB patch outside image", p.design_db)));
            }
            let idx = p.pixel_indices(map.width());
            Ok(idx.iter().map(|&i| map.values()[i]).sum::<f64>() / idx.len() as f64)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let peak = means[reference];
    if !(peak > 0.0) {
        return Err(FusionError::ZeroMean);
    }
    Ok(layout
        .patches
        .iter()
        .zip(&means)
        .enumerate()
        .map(|(k, (p, &m))| PatchDb {
            design_db: p.design_db,
            measured_db: if k == reference {
                0.0
            } else if m > 0.0 {
                20.0 * (peak / m).log10()
            } else {
                f64::INFINITY
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{extract_linear_range, CrfEntry, DEFAULT_SLOPE_TOLERANCE};
    use crate::golden;
    use crate::sensor::{capture, default_sensor};
    use crate::target::{render_target, test_target_78db, Patch};
    use approx::assert_relative_eq;

    const LIMITS: (f64, f64) = (29e-6, 1.0);

    fn reference_crf() -> CrfTable {
        CrfTable::from_csv(golden::REFERENCE_CRF_CSV).unwrap()
    }

    #[test]
    fn plan_80_over_40() {
        let plan = plan_exposures(80.0, 40.0, 1e-4, LIMITS).unwrap();
        assert_eq!(plan.n_images, 2);
        assert_eq!(plan.factors, vec![100.0]);
        assert_relative_eq!(plan.exposure_times[1], 1e-2, max_relative = 1e-15);
    }

    #[test]
    fn plan_single_shot() {
        let plan = plan_exposures(40.0, 40.0, 1e-3, LIMITS).unwrap();
        assert_eq!(plan.n_images, 1);
        assert!(plan.factors.is_empty());
        assert_eq!(plan.exposure_times, vec![1e-3]);
    }

    #[test]
    fn plan_135_over_39_66() {
        let plan = plan_exposures(135.0, 39.66, 1e-5 * 3.0, (1e-6, 10.0)).unwrap();
        assert_eq!(plan.n_images, 4);
        assert_relative_eq!(plan.factors[0], 10f64.powf(39.66 / 20.0), max_relative = 1e-12);
        assert_relative_eq!(plan.factors[0], 96.16, epsilon = 0.01);
        assert_eq!(plan.factors[0], plan.factors[1]);
        assert_relative_eq!(plan.factors[2], 10f64.powf(16.02 / 20.0), max_relative = 1e-9);
        let db: f64 = plan.factors.iter().map(|p| 20.0 * p.log10()).sum();
        assert_relative_eq!(db, 135.0 - 39.66, epsilon = 1e-9);
        for (k, w) in plan.exposure_times.windows(2).enumerate() {
            assert_relative_eq!(w[1], w[0] * plan.factors[k], max_relative = 1e-15);
        }
    }

    #[test]
    fn plan_infeasible_and_invalid() {
        assert!(matches!(plan_exposures(80.0, 40.0, 0.5, LIMITS), Err(FusionError::PlanInfeasible(_))));
        assert!(plan_exposures(0.0, 40.0, 1e-3, LIMITS).is_err());
    }

    #[test]
    fn plan_anchored_on_longest() {
        let plan = plan_exposures_anchored(80.0, 40.0, 8.8e-3, PlanAnchor::Longest, LIMITS).unwrap();
        assert_relative_eq!(plan.exposure_times[0], 8.8e-5, max_relative = 1e-12);
        assert_eq!(plan.exposure_times[1], 8.8e-3);
    }

    fn ramp_image(t: f64, values: Vec<u16>) -> RawImage {
        let n = values.len();
        RawImage::new(n, 1, 16, t, values).unwrap()
    }

    #[test]
    fn single_image_is_pointwise_inverse() {
        let crf = reference_crf();
        let lr = extract_linear_range(&crf, DEFAULT_SLOPE_TOLERANCE).unwrap();
        let img = ramp_image(1e-3, vec![400, 1000, 5000, 20000, 37000]);
        let plan = plan_exposures(30.0, 40.0, 1e-3, LIMITS).unwrap();
        let out = fuse(std::slice::from_ref(&img), &crf, &lr, &plan).unwrap();
        for (k, &v) in img.samples().iter().enumerate() {
            assert_eq!(out.radiance.values()[k], crate::calibration::invert_crf(&crf, f64::from(v)));
            assert_eq!(out.validity_count[k], 1);
        }
    }

    #[test]
    fn selection_when_only_long_exposure_valid() {
        let crf = reference_crf();
        let lr = extract_linear_range(&crf, DEFAULT_SLOPE_TOLERANCE).unwrap();
        let plan = plan_exposures(80.0, 40.0, 1e-4, LIMITS).unwrap();
        let short = ramp_image(1e-4, vec![250, 60000, 300]);
        let long = ramp_image(1e-2, vec![5000, 64537, 100]);
        let out = fuse(&[short, long], &crf, &lr, &plan).unwrap();
        assert_eq!(out.validity_count, vec![1, 0, 0]);
        assert_eq!(out.radiance.values()[0], crate::calibration::invert_crf(&crf, 5000.0));
        assert_eq!(out.sentinel_mask, vec![Sentinel::Ok, Sentinel::ClampedBright, Sentinel::ClampedDark]);
        // bright pixel: inverse of the short exposure, rescaled by T_N / T_1
        assert_relative_eq!(
            out.radiance.values()[1],
            crate::calibration::invert_crf(&crf, 60000.0) * 100.0,
            max_relative = 1e-12
        );
        assert_eq!(out.radiance.values()[2], 0.0);
    }

    #[test]
    fn plan_mismatch_detected() {
        let crf = reference_crf();
        let lr = extract_linear_range(&crf, DEFAULT_SLOPE_TOLERANCE).unwrap();
        let plan = plan_exposures(80.0, 40.0, 1e-4, LIMITS).unwrap();
        let a = ramp_image(1e-4, vec![1000]);
        let b = ramp_image(2e-2, vec![1000]);
        assert!(matches!(fuse(std::slice::from_ref(&a), &crf, &lr, &plan), Err(FusionError::PlanMismatch(_))));
        assert!(matches!(fuse(&[a.clone(), b], &crf, &lr, &plan), Err(FusionError::PlanMismatch(_))));
        let c = ramp_image(1e-2, vec![1000]);
        assert!(matches!(fuse(&[c, a], &crf, &lr, &plan), Err(FusionError::PlanMismatch(_))));
    }

    #[test]
    fn ground_truth_measures_design_db() {
        let (map, layout) = render_target(&test_target_78db()).unwrap();
        for row in measure_map_db(&map, &layout).unwrap() {
            assert!((row.measured_db - row.design_db).abs() < 1e-9);
        }
    }

    #[test]
    fn db_definition_and_zero_mean() {
        let layout = PatchLayout {
            grid_rows: 1,
            grid_cols: 3,
            patches: vec![
                Patch { center: (2.0, 2.0), radius: 1.0, design_db: 0.0 },
                Patch { center: (6.0, 2.0), radius: 1.0, design_db: 40.0 },
                Patch { center: (10.0, 2.0), radius: 1.0, design_db: 60.0 },
            ],
            background_irradiance: 0.0,
            width: 13,
            height: 5,
        };
        let mut values = vec![0.0; 65];
        for p in &layout.patches[..2] {
            let v = if p.design_db == 0.0 { 1e6 } else { 1e4 };
            for i in p.pixel_indices(13) {
                values[i] = v;
            }
        }
        let map = IrradianceMap::new(13, 5, values).unwrap();
        let rows = measure_map_db(&map, &layout).unwrap();
        assert_eq!(rows[0].measured_db, 0.0);
        assert_relative_eq!(rows[1].measured_db, 40.0, epsilon = 1e-12);
        assert_eq!(rows[2].measured_db, f64::INFINITY);
        let dark = IrradianceMap::uniform(13, 5, 0.0).unwrap();
        assert_eq!(measure_map_db(&dark, &layout), Err(FusionError::ZeroMean));
    }

    fn exact_crf(cfg: &SensorConfig) -> CrfTable {
        let entries = cfg.response_curve[1..]
            .iter()
            .rev()
            .map(|&(h, v)| CrfEntry { design_db: 20.0 * (1e6 / h).log10(), irradiance: h, v_avg: v, saturated: false })
            .collect();
        CrfTable { entries, black_level: cfg.dark_level, calibration_exposure: cfg.reference_exposure, bit_depth: 16 }
    }

    #[test]
    fn composite_monotone_on_noiseless_ramp() {
        let cfg = default_sensor().noiseless();
        let crf = exact_crf(&cfg);
        let lr = extract_linear_range(&reference_crf(), DEFAULT_SLOPE_TOLERANCE).unwrap();
        let values: Vec<f64> = (0..4000).map(|i| 10f64.powf(i as f64 / 4000.0 * 5.0)).collect();
        let scene = IrradianceMap::new(4000, 1, values).unwrap();
        let plan = plan_exposures(80.0, lr.ldr_e, 1e-4, LIMITS).unwrap();
        let images: Vec<RawImage> = plan.exposure_times.iter().map(|&t| capture(&cfg, &scene, t, 1).unwrap()).collect();
        let out = fuse(&images, &crf, &lr, &plan).unwrap();
        let r = out.radiance.values();
        for k in 1..r.len() {
            assert!(r[k] >= r[k - 1], "drop at {k}: {} < {}", r[k], r[k - 1]);
        }
    }

    #[test]
    fn mean_of_valid_equals_selection_when_disjoint() {
        let cfg = default_sensor().noiseless();
        let crf = exact_crf(&cfg);
        let lr = extract_linear_range(&reference_crf(), DEFAULT_SLOPE_TOLERANCE).unwrap();
        let inverse = crf.inverse();
        // irradiance span of the window, padded past integer rounding of
        // the boundary codes
        let span = inverse.eval(lr.v_max) / inverse.eval(lr.v_min);
        let t1 = 1e-4;
        let times = [t1, t1 * span * 1.01];
        let values: Vec<f64> = (0..3000).map(|i| 10f64.powf(1.0 + i as f64 / 3000.0 * 5.0)).collect();
        let scene = IrradianceMap::new(3000, 1, values).unwrap();
        let images: Vec<RawImage> = times.iter().map(|&t| capture(&cfg, &scene, t, 1).unwrap()).collect();
        let out = fuse_ladder(&images, &crf, &lr).unwrap();
        for i in 0..3000 {
            assert!(out.validity_count[i] <= 1, "pixel {i} valid twice");
            if out.validity_count[i] == 1 {
                let k = images
                    .iter()
                    .position(|img| {
                        let v = f64::from(img.samples()[i]);
                        v >= lr.v_min && v <= lr.v_max
                    })
                    .unwrap();
                let expect = inverse.at_code(images[k].samples()[i]) * (times[1] / times[k]);
                assert_eq!(out.radiance.values()[i], expect);
            }
        }
    }

    #[test]
    fn log_preview_spans_full_byte_range() {
        let out = FusionOutput {
            radiance: IrradianceMap::new(3, 1, vec![0.0, 9.0, 99.0]).unwrap(),
            validity_count: vec![1; 3],
            sentinel_mask: vec![Sentinel::Ok; 3],
        };
        assert_eq!(out.log_preview(), vec![0, 128, 255]);
    }
}
