//! CRF generation from a single calibration shot.
//!
//! Pipeline: pick the exposure that drives the 0 dB zone to the top of the
//! output range, average each patch spatially, flag patches containing
//! full-scale pixels from their histograms, tabulate `(I_s, v_avg)`, and find
//! the widest window whose segment slopes stay within a fractional tolerance
//! of their mean. That window's end outputs are `v_max` / `v_min`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::image::{IrradianceMap, RawImage};
use crate::io::{ConfigError, IoError, KeyValues};
use crate::sensor::{self, SensorConfig, SensorError};
use crate::target::{attenuate, Patch, PatchLayout};

/// Histogram bin width in counts.
pub const HISTOGRAM_BIN_WIDTH: u32 = 1000;

/// Zone pixels within this fraction of the zone mean count as homogeneous.
pub const HOMOGENEITY_BAND: f64 = 0.05;

/// Default fractional slope tolerance for the linear window.
pub const DEFAULT_SLOPE_TOLERANCE: f64 = 0.6;

/// Margin (pixels) kept between patch discs and the pixels used for the
/// black level.
const BACKGROUND_MARGIN: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("patch {0} is missing or does not fit the image")]
    ZoneOutOfBounds(usize),
    #[error("calibration exposure unreachable: {0}")]
    Unreachable(String),
    #[error("CRF not monotone: {dimmer_db} dB patch reads at least as high as {brighter_db} dB")]
    NonMonotoneCrf { brighter_db: f64, dimmer_db: f64 },
    #[error("no linear region: {0}")]
    NoLinearRegion(String),
    #[error("invalid CRF table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneStats {
    pub pixel_count: usize,
    pub mean: f64,
    /// Counts per `HISTOGRAM_BIN_WIDTH`-wide bin starting at 0.
    pub histogram: Vec<u64>,
    /// Samples at full scale `2^A - 1`.
    pub saturated_count: usize,
    /// Fraction of samples within ±5% of the mean.
    pub homogeneity: f64,
}

fn stats_of(samples: impl Iterator<Item = u16> + Clone, full: u16) -> ZoneStats {
    let bins = (u32::from(full) / HISTOGRAM_BIN_WIDTH + 1) as usize;
    let mut histogram = vec![0u64; bins];
    let (mut n, mut sum, mut saturated) = (0usize, 0u64, 0usize);
    for s in samples.clone() {
        n += 1;
        sum += u64::from(s);
        histogram[(u32::from(s) / HISTOGRAM_BIN_WIDTH) as usize] += 1;
        if s == full {
            saturated += 1;
        }
    }
    let mean = if n == 0 { 0.0 } else { sum as f64 / n as f64 };
    let band = HOMOGENEITY_BAND * mean;
    let close = samples.filter(|&s| (f64::from(s) - mean).abs() <= band).count();
    ZoneStats {
        pixel_count: n,
        mean,
        histogram,
        saturated_count: saturated,
        homogeneity: if n == 0 { 0.0 } else { close as f64 / n as f64 },
    }
}

fn patch_in<'a>(img: &RawImage, layout: &'a PatchLayout, patch_index: usize) -> Result<&'a Patch, CalibrationError> {
    layout
        .patches
        .get(patch_index)
        .filter(|p| p.fits(img.width(), img.height()))
        .ok_or(CalibrationError::ZoneOutOfBounds(patch_index))
}

pub fn zone_stats(img: &RawImage, layout: &PatchLayout, patch_index: usize) -> Result<ZoneStats, CalibrationError> {
    let patch = patch_in(img, layout, patch_index)?;
    let idx = patch.pixel_indices(img.width());
    let s = img.samples();
    Ok(stats_of(idx.iter().map(|&i| s[i]), img.max_value()))
}

/// Relative exposure resolution of the calibration search.
const EXPOSURE_SEARCH_TOLERANCE: f64 = 1e-4;

/// Exposure maximizing the 0 dB zone mean: the shortest exposure at which
/// the zone mean has reached its ceiling (within half a count).
pub fn find_calibration_exposure(
    cfg: &SensorConfig,
    scene: &IrradianceMap,
    layout: &PatchLayout,
) -> Result<f64, CalibrationError> {
    let probe = ZoneProbe::reference(cfg, scene, layout)?;
    let zone_mean = |t: f64| probe.mean(t);

    let (t_min, t_max) = cfg.exposure_limits;
    let ceiling = zone_mean(t_max)?;
    if ceiling <= cfg.dark_level + 1.0 {
        return Err(CalibrationError::Unreachable(format!(
            "0 dB zone reads {ceiling:.1} at T_max = {t_max} s, not above the dark floor"
        )));
    }
    let target = ceiling - 0.5;
    if zone_mean(t_min)? >= target {
        return Err(CalibrationError::Unreachable(format!(
            "0 dB zone already at its ceiling ({ceiling:.1}) at T_min = {t_min} s"
        )));
    }
    let (mut lo, mut hi) = (t_min, t_max);
    while hi / lo > 1.0 + EXPOSURE_SEARCH_TOLERANCE {
        let mid = (lo * hi).sqrt();
        if zone_mean(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Spatial mean of one zone under simulated capture, cropped to the zone's
/// bounding box so exposure searches stay cheap. All probes share the
/// config seed, so the mean is monotone in exposure.
pub(crate) struct ZoneProbe<'a> {
    cfg: &'a SensorConfig,
    crop: IrradianceMap,
    idx: Vec<usize>,
}

impl<'a> ZoneProbe<'a> {
    /// Probe on the layout's 0 dB patch.
    pub(crate) fn reference(
        cfg: &'a SensorConfig,
        scene: &IrradianceMap,
        layout: &PatchLayout,
    ) -> Result<Self, CalibrationError> {
        let r =
            layout.reference_patch().ok_or_else(|| CalibrationError::Unreachable("layout has no 0 dB patch".into()))?;
        Self::patch(cfg, scene, layout, r)
    }

    pub(crate) fn patch(
        cfg: &'a SensorConfig,
        scene: &IrradianceMap,
        layout: &PatchLayout,
        r: usize,
    ) -> Result<Self, CalibrationError> {
        let patch = layout.patches.get(r).ok_or(CalibrationError::ZoneOutOfBounds(r))?;
        if !patch.fits(scene.width(), scene.height()) {
            return Err(CalibrationError::ZoneOutOfBounds(r));
        }
        let (x0, y0, x1, y1) = patch.bounds();
        let (x0, y0) = (x0 as usize, y0 as usize);
        let crop = scene.crop(x0, y0, x1 as usize - x0 + 1, y1 as usize - y0 + 1);
        let local = Patch { center: (patch.center.0 - x0 as f64, patch.center.1 - y0 as f64), ..patch.clone() };
        let idx = local.pixel_indices(crop.width());
        Ok(Self { cfg, crop, idx })
    }

    pub(crate) fn mean(&self, t: f64) -> Result<f64, SensorError> {
        let img = sensor::capture(self.cfg, &self.crop, t, self.cfg.rng_seed)?;
        let s = img.samples();
        Ok(self.idx.iter().map(|&i| f64::from(s[i])).sum::<f64>() / self.idx.len() as f64)
    }
}

/// Pixel-wise rounded mean of repeated calibration shots.
pub fn average_shots(shots: &[RawImage]) -> Option<RawImage> {
    let first = shots.first()?;
    let n = shots.len() as f64;
    let samples = (0..first.samples().len())
        .map(|i| {
            let sum: f64 = shots.iter().map(|s| f64::from(s.samples()[i])).sum();
            (sum / n).round() as u16
        })
        .collect();
    RawImage::new(first.width(), first.height(), first.bit_depth(), first.exposure_time(), samples).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfEntry {
    pub design_db: f64,
    pub irradiance: f64,
    pub v_avg: f64,
    pub saturated: bool,
}

/// Measured camera response: one entry per calibration patch, brightest
/// first, plus the black level read off the unlit background.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfTable {
    pub entries: Vec<CrfEntry>,
    pub black_level: f64,
    /// Exposure the table was measured at, seconds.
    pub calibration_exposure: f64,
    pub bit_depth: u32,
}

pub fn build_crf(img: &RawImage, layout: &PatchLayout, peak_irradiance: f64) -> Result<CrfTable, CalibrationError> {
    build_crf_with_stats(img, layout, peak_irradiance).map(|(t, _)| t)
}

/// Like [`build_crf`], also returning each patch's statistics in layout order.
pub fn build_crf_with_stats(
    img: &RawImage,
    layout: &PatchLayout,
    peak_irradiance: f64,
) -> Result<(CrfTable, Vec<ZoneStats>), CalibrationError> {
    let stats = (0..layout.patches.len()).map(|k| zone_stats(img, layout, k)).collect::<Result<Vec<_>, _>>()?;
    let mut entries: Vec<CrfEntry> = layout
        .patches
        .iter()
        .zip(&stats)
        .map(|(p, s)| CrfEntry {
            design_db: p.design_db,
            irradiance: attenuate(peak_irradiance, p.design_db),
            v_avg: s.mean,
            saturated: s.saturated_count > 0,
        })
        .collect();
    entries.sort_by(|a, b| b.irradiance.total_cmp(&a.irradiance));

    let bg = layout.background_indices(BACKGROUND_MARGIN);
    if bg.is_empty() {
        return Err(CalibrationError::InvalidTable("layout leaves no background pixels".into()));
    }
    let s = img.samples();
    let black_level = bg.iter().map(|&i| f64::from(s[i])).sum::<f64>() / bg.len() as f64;
    let table =
        CrfTable { entries, black_level, calibration_exposure: img.exposure_time(), bit_depth: img.bit_depth() };
    Ok((table, stats))
}

impl CrfTable {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let full = f64::from(((1u32 << self.bit_depth) - 1) as u16);
        if self.entries.is_empty() {
            return Err(CalibrationError::InvalidTable("no entries".into()));
        }
        if self.entries.windows(2).any(|w| w[0].irradiance <= w[1].irradiance) {
            return Err(CalibrationError::InvalidTable(
                "entries must be sorted by strictly descending irradiance".into(),
            ));
        }
        if self.entries.iter().any(|e| !(e.irradiance > 0.0 && (0.0..=full).contains(&e.v_avg))) {
            return Err(CalibrationError::InvalidTable("entry out of range".into()));
        }
        if !(0.0..=full).contains(&self.black_level) {
            return Err(CalibrationError::InvalidTable("black level out of range".into()));
        }
        Ok(())
    }

    /// Warning-grade check that outputs fall with irradiance.
    pub fn check_monotone(&self) -> Result<(), CalibrationError> {
        for w in self.entries.windows(2) {
            if w[1].v_avg >= w[0].v_avg {
                return Err(CalibrationError::NonMonotoneCrf {
                    brighter_db: w[0].design_db,
                    dimmer_db: w[1].design_db,
                });
            }
        }
        match self.entries.last() {
            Some(last) if last.v_avg <= self.black_level => {
                Err(CalibrationError::NonMonotoneCrf { brighter_db: last.design_db, dimmer_db: f64::INFINITY })
            }
            _ => Ok(()),
        }
    }

    /// Design dB of the brightest patch without any full-scale pixel.
    pub fn first_unsaturated_db(&self) -> Option<f64> {
        self.entries.iter().find(|e| !e.saturated).map(|e| e.design_db)
    }

    pub fn top_output(&self) -> f64 {
        self.entries[0].v_avg
    }

    pub fn inverse(&self) -> CrfInverse {
        CrfInverse::new(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# calibration_exposure={}", self.calibration_exposure);
        let _ = writeln!(out, "# bit_depth={}", self.bit_depth);
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["design_db", "irradiance", "v_avg", "saturated"]);
        for e in &self.entries {
            let _ = w.write_record([
                e.design_db.to_string(),
                e.irradiance.to_string(),
                e.v_avg.to_string(),
                e.saturated.to_string(),
            ]);
        }
        let _ = w.write_record(["black".to_string(), "0".into(), self.black_level.to_string(), "false".into()]);
        out.push_str(&String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default());
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, IoError> {
        let meta = KeyValues::parse(&text.lines().filter_map(|l| l.strip_prefix('#')).collect::<Vec<_>>().join("\n"))?;
        let mut reader =
            csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut entries = Vec::new();
        let mut black = None;
        for rec in reader.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| -> Result<f64, IoError> {
                field(i)
                    .parse()
                    .map_err(|_| IoError::Format(format!("crf csv: bad number {:?} in column {i}", field(i))))
            };
            if field(0) == "black" {
                black = Some(num(2)?);
                continue;
            }
            let saturated = match field(3) {
                "true" => true,
                "false" => false,
                other => return Err(IoError::Format(format!("crf csv: bad flag {other:?}"))),
            };
            entries.push(CrfEntry { design_db: num(0)?, irradiance: num(1)?, v_avg: num(2)?, saturated });
        }
        let table = Self {
            entries,
            black_level: black.ok_or_else(|| IoError::Format("crf csv: missing black row".into()))?,
            calibration_exposure: meta.require("calibration_exposure")?,
            bit_depth: meta.require("bit_depth")?,
        };
        table.validate().map_err(|e| IoError::Format(e.to_string()))?;
        Ok(table)
    }
}

/// Monotone inverse of a [`CrfTable`]: output counts to scaled irradiance
/// at the calibration exposure.
#[derive(Debug, Clone)]
pub struct CrfInverse {
    /// `(v, I)` ascending in both; the first node is `(v_N, 0)`.
    nodes: Vec<(f64, f64)>,
    lut: Vec<f64>,
}

impl CrfInverse {
    fn new(crf: &CrfTable) -> Self {
        let mut inv = Self::new_without_lut(crf);
        let full = (1u32 << crf.bit_depth) - 1;
        inv.lut = (0..=full).map(|v| inv.eval(f64::from(v))).collect();
        inv
    }

    fn new_without_lut(crf: &CrfTable) -> Self {
        let mut nodes = vec![(crf.black_level, 0.0)];
        for e in crf.entries.iter().rev() {
            let last = nodes[nodes.len() - 1];
            // running max keeps the inverse a function when noise breaks ordering
            if e.v_avg > last.0 && e.irradiance > last.1 {
                nodes.push((e.v_avg, e.irradiance));
            }
        }
        Self { nodes, lut: Vec::new() }
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn black_level(&self) -> f64 {
        self.nodes[0].0
    }

    pub fn top(&self) -> (f64, f64) {
        self.nodes[self.nodes.len() - 1]
    }

    /// Index `i` of the segment `nodes[i]..nodes[i+1]` containing `v`, if
    /// `v` lies inside the tabulated span.
    pub fn segment(&self, v: f64) -> Option<usize> {
        let (lo, hi) = (self.nodes[0].0, self.top().0);
        if !(v >= lo && v <= hi) || self.nodes.len() < 2 {
            return None;
        }
        let i = self.nodes.partition_point(|&(nv, _)| nv <= v);
        Some(i.clamp(1, self.nodes.len() - 1) - 1)
    }

    pub fn eval(&self, v: f64) -> f64 {
        let (top_v, top_i) = self.top();
        if v >= top_v {
            return top_i;
        }
        if v < self.nodes[0].0 {
            return 0.0;
        }
        let Some(i) = self.segment(v) else { return 0.0 };
        let (va, ia) = self.nodes[i];
        let (vb, ib) = self.nodes[i + 1];
        let frac = (v - va) / (vb - va);
        if ia == 0.0 {
            ia + (ib - ia) * frac
        } else {
            10f64.powf(ia.log10() + (ib.log10() - ia.log10()) * frac)
        }
    }

    /// Table lookup for integer codes.
    pub fn at_code(&self, code: u16) -> f64 {
        self.lut[code as usize]
    }
}

/// Irradiance for output `v`: full-scale clamp above the brightest entry,
/// 0 below the black level, log-linear interpolation in between.
pub fn invert_crf(crf: &CrfTable, v: f64) -> f64 {
    CrfInverse::new_without_lut(crf).eval(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSlope {
    pub bright_db: f64,
    pub dim_db: f64,
    /// `dv / dI` between the two entries.
    pub linear: f64,
    /// `d log10 v / d log10 I` between the two entries.
    pub log: f64,
}

/// Usable linear window of the CRF.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRange {
    pub v_max: f64,
    pub v_min: f64,
    /// `20 log10(v_max / v_min)`.
    pub ldr_e: f64,
    pub first_unsaturated_db: f64,
    /// Design dB of the window's bright and dim ends.
    pub bright_db: f64,
    pub dim_db: f64,
    /// Mean `dv/dI` across the window.
    pub mean_slope: f64,
    pub slope_tolerance: f64,
    /// Every segment between adjacent unsaturated entries.
    pub slope_log: Vec<SegmentSlope>,
}

pub fn extract_linear_range(crf: &CrfTable, slope_tolerance: f64) -> Result<LinearRange, CalibrationError> {
    let e = &crf.entries;
    let usable = |k: usize| !e[k].saturated && e[k].v_avg > crf.black_level;
    if (0..e.len()).filter(|&k| usable(k)).count() < 3 {
        return Err(CalibrationError::NoLinearRegion("fewer than 3 unsaturated entries".into()));
    }
    // segment k joins entries k and k+1
    let seg_ok: Vec<bool> = (0..e.len().saturating_sub(1)).map(|k| usable(k) && usable(k + 1)).collect();
    let slope = |k: usize| (e[k].v_avg - e[k + 1].v_avg) / (e[k].irradiance - e[k + 1].irradiance);
    let log_slope = |k: usize| {
        (e[k].v_avg.log10() - e[k + 1].v_avg.log10()) / (e[k].irradiance.log10() - e[k + 1].irradiance.log10())
    };

    // (segments, ldr_e, start) of the best run so far
    let mut best: Option<(usize, f64, usize, f64)> = None;
    for start in 0..seg_ok.len() {
        let mut sum = 0.0;
        for end in start..seg_ok.len() {
            if !seg_ok[end] {
                break;
            }
            sum += slope(end);
            let len = end - start + 1;
            if len < 2 {
                continue;
            }
            let mean = sum / len as f64;
            let within = mean > 0.0 && (start..=end).all(|k| (slope(k) - mean).abs() <= slope_tolerance * mean);
            if !within {
                continue;
            }
            let ldr = 20.0 * (e[start].v_avg / e[end + 1].v_avg).log10();
            let better = match best {
                None => true,
                Some((blen, bldr, _, _)) => len > blen || (len == blen && ldr > bldr),
            };
            if better {
                best = Some((len, ldr, start, mean));
            }
        }
    }
    let (len, ldr_e, start, mean_slope) = best.ok_or_else(|| {
        CalibrationError::NoLinearRegion(format!("no run of >= 2 segments within {slope_tolerance} of its mean slope"))
    })?;
    let end = start + len;
    let slope_log = (0..seg_ok.len())
        .filter(|&k| seg_ok[k])
        .map(|k| SegmentSlope {
            bright_db: e[k].design_db,
            dim_db: e[k + 1].design_db,
            linear: slope(k),
            log: log_slope(k),
        })
        .collect();
    Ok(LinearRange {
        v_max: e[start].v_avg,
        v_min: e[end].v_avg,
        ldr_e,
        first_unsaturated_db: crf.first_unsaturated_db().unwrap_or(f64::NAN),
        bright_db: e[start].design_db,
        dim_db: e[end].design_db,
        mean_slope,
        slope_tolerance,
        slope_log,
    })
}

/// Worst-case SNR of the window: `v_min / v_N`.
pub fn noise_floor_snr(lr: &LinearRange, crf: &CrfTable) -> f64 {
    lr.v_min / crf.black_level
}

const LR_KEYS: &[&str] = &[
    "v_max",
    "v_min",
    "ldr_e",
    "first_unsaturated_db",
    "bright_db",
    "dim_db",
    "mean_slope",
    "slope_tolerance",
    "segment",
];

impl LinearRange {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("v_max", self.v_max);
        kv.push("v_min", self.v_min);
        kv.push("ldr_e", self.ldr_e);
        kv.push("first_unsaturated_db", self.first_unsaturated_db);
        kv.push("bright_db", self.bright_db);
        kv.push("dim_db", self.dim_db);
        kv.push("mean_slope", self.mean_slope);
        kv.push("slope_tolerance", self.slope_tolerance);
        for s in &self.slope_log {
            kv.push("segment", format!("{}, {}, {}, {}", s.bright_db, s.dim_db, s.linear, s.log));
        }
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.check_keys(LR_KEYS)?;
        let slope_log = kv
            .get_all("segment")
            .map(|s| {
                let v: Vec<f64> = crate::io::keyvalue::parse_list("segment", s)?;
                match v[..] {
                    [bright_db, dim_db, linear, log] => Ok(SegmentSlope { bright_db, dim_db, linear, log }),
                    _ => Err(ConfigError::BadValue { key: "segment".into(), value: s.into() }),
                }
            })
            .collect::<Result<_, _>>()?;
        let lr = Self {
            v_max: kv.require("v_max")?,
            v_min: kv.require("v_min")?,
            ldr_e: kv.require("ldr_e")?,
            first_unsaturated_db: kv.require("first_unsaturated_db")?,
            bright_db: kv.require("bright_db")?,
            dim_db: kv.require("dim_db")?,
            mean_slope: kv.require("mean_slope")?,
            slope_tolerance: kv.require("slope_tolerance")?,
            slope_log,
        };
        if !(lr.v_min < lr.v_max) {
            return Err(ConfigError::Invalid(format!("v_min {} >= v_max {}", lr.v_min, lr.v_max)));
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::golden;
    use crate::sensor::default_sensor;
    use crate::target::{calibration_target_90db, render_target, scale_illumination};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn reference_crf() -> CrfTable {
        CrfTable::from_csv(golden::REFERENCE_CRF_CSV).unwrap()
    }

    fn uniform_zone_image(value: u16) -> (RawImage, PatchLayout) {
        let (_, layout) = render_target(&calibration_target_90db()).unwrap();
        let img = RawImage::new(512, 512, 16, 1e-3, vec![value; 512 * 512]).unwrap();
        (img, layout)
    }

    #[test]
    fn uniform_zone_stats() {
        let (img, layout) = uniform_zone_image(1234);
        let s = zone_stats(&img, &layout, 3).unwrap();
        assert_eq!(s.mean, 1234.0);
        assert_eq!(s.saturated_count, 0);
        assert_eq!(s.homogeneity, 1.0);
        assert_eq!(s.histogram.iter().sum::<u64>(), s.pixel_count as u64);
        assert_eq!(s.histogram[1], s.pixel_count as u64);
        assert_eq!(s.histogram.len(), 66);
    }

    #[test]
    fn counts_full_scale_samples() {
        let (img, layout) = uniform_zone_image(52_000);
        let idx = layout.patches[2].pixel_indices(512);
        let mut samples = img.samples().to_vec();
        for &i in idx.iter().step_by(idx.len() / 169).take(169) {
            samples[i] = 65535;
        }
        let img = RawImage::new(512, 512, 16, 1e-3, samples).unwrap();
        let s = zone_stats(&img, &layout, 2).unwrap();
        assert_eq!(s.saturated_count, 169);
        assert_eq!(*s.histogram.last().unwrap(), 169);
    }

    #[test]
    fn zone_out_of_bounds() {
        let (_, layout) = render_target(&calibration_target_90db()).unwrap();
        let img = RawImage::new(100, 100, 16, 1e-3, vec![0; 10_000]).unwrap();
        assert_eq!(zone_stats(&img, &layout, 15), Err(CalibrationError::ZoneOutOfBounds(15)));
        assert_eq!(zone_stats(&img, &layout, 99), Err(CalibrationError::ZoneOutOfBounds(99)));
    }

    #[test]
    fn noiseless_capture_reproduces_table1() {
        let cfg = default_sensor().noiseless();
        let (scene, layout) = render_target(&calibration_target_90db()).unwrap();
        let img = sensor::capture(&cfg, &scene, cfg.reference_exposure, 1).unwrap();
        let crf = build_crf(&img, &layout, 1e6).unwrap();
        assert_eq!(crf.entries.len(), 16);
        for (e, &(db, _, v)) in crf.entries.iter().zip(golden::CALIBRATION_CRF.iter()) {
            assert_eq!(e.design_db, db);
            assert!((e.v_avg - v).abs() <= 1.0, "{db} dB: {} vs {v}", e.v_avg);
            assert!(!e.saturated);
        }
        assert!((crf.black_level - 191.3).abs() <= 1.0);
        crf.check_monotone().unwrap();
    }

    #[test]
    fn zero_db_zone_mean_noiseless() {
        let cfg = default_sensor().noiseless();
        let (scene, layout) = render_target(&calibration_target_90db()).unwrap();
        let img = sensor::capture(&cfg, &scene, cfg.reference_exposure, 1).unwrap();
        // rounded node value
        assert_eq!(zone_stats(&img, &layout, 0).unwrap().mean, 64538.0);
    }

    #[test]
    fn calibration_exposure_near_published() {
        let cfg = default_sensor();
        let (scene, layout) = render_target(&calibration_target_90db()).unwrap();
        let t = find_calibration_exposure(&cfg, &scene, &layout).unwrap();
        assert!((t / 3.703e-3 - 1.0).abs() < 0.05, "T_c = {t}");
    }

    #[test]
    fn calibration_exposure_reciprocity() {
        let cfg = default_sensor();
        let (scene, layout) = render_target(&calibration_target_90db()).unwrap();
        let t1 = find_calibration_exposure(&cfg, &scene, &layout).unwrap();
        let bright = scale_illumination(&scene, 2.0).unwrap();
        let t2 = find_calibration_exposure(&cfg, &bright, &layout).unwrap();
        assert!((t2 / (t1 / 2.0) - 1.0).abs() < 0.01, "{t1} {t2}");
    }

    #[test]
    fn dark_scene_unreachable() {
        let cfg = default_sensor();
        let (_, layout) = render_target(&calibration_target_90db()).unwrap();
        let dark = IrradianceMap::uniform(512, 512, 0.0).unwrap();
        assert!(matches!(find_calibration_exposure(&cfg, &dark, &layout), Err(CalibrationError::Unreachable(_))));
    }

    #[test]
    fn reference_linear_window() {
        let lr = extract_linear_range(&reference_crf(), DEFAULT_SLOPE_TOLERANCE).unwrap();
        assert_eq!((lr.bright_db, lr.dim_db), (32.0, 84.0));
        assert!((lr.v_max - 37486.0).abs() < 1.0);
        assert!((lr.v_min - 389.0).abs() < 1.0);
        assert!((lr.ldr_e - 39.66).abs() <= 0.05, "{}", lr.ldr_e);
        assert_relative_eq!(lr.ldr_e, 20.0 * (lr.v_max / lr.v_min).log10(), epsilon = 1e-9);
        // average linear-domain slope over the window
        assert!((lr.mean_slope - 1.65).abs() < 0.01, "{}", lr.mean_slope);
        assert_eq!(lr.first_unsaturated_db, 28.0);
        assert_eq!(lr.slope_log.len(), 11);
    }

    #[test]
    fn window_stable_across_tolerance_band() {
        for tol in [0.5, 0.55, 0.6, 0.65, 0.7] {
            let lr = extract_linear_range(&reference_crf(), tol).unwrap();
            assert_eq!((lr.bright_db, lr.dim_db), (32.0, 84.0), "tol {tol}");
        }
    }

    #[test]
    fn perfectly_linear_table_spans_everything() {
        let entries: Vec<CrfEntry> = (0..10)
            .map(|k| {
                let irr = attenuate(1e6, 6.0 * k as f64);
                CrfEntry { design_db: 6.0 * k as f64, irradiance: irr, v_avg: 0.05 * irr, saturated: false }
            })
            .collect();
        let crf = CrfTable { entries, black_level: 1.0, calibration_exposure: 1e-3, bit_depth: 16 };
        let lr = extract_linear_range(&crf, 1e-9).unwrap();
        assert_eq!((lr.bright_db, lr.dim_db), (0.0, 54.0));
        assert_relative_eq!(lr.ldr_e, 54.0, epsilon = 1e-9);
    }

    #[test]
    fn no_linear_region_errors() {
        let mut crf = reference_crf();
        for e in crf.entries.iter_mut().take(14) {
            e.saturated = true;
        }
        assert!(matches!(extract_linear_range(&crf, 0.6), Err(CalibrationError::NoLinearRegion(_))));
        // alternating slopes never agree at a tiny tolerance
        assert!(matches!(extract_linear_range(&reference_crf(), 1e-3), Err(CalibrationError::NoLinearRegion(_))));
    }

    #[test]
    fn snr_examples() {
        let crf = reference_crf();
        let lr = extract_linear_range(&crf, DEFAULT_SLOPE_TOLERANCE).unwrap();
        assert_relative_eq!(noise_floor_snr(&lr, &crf), 389.6 / 191.3, epsilon = 1e-12);
        let mut lr2 = lr.clone();
        lr2.v_min = 389.0;
        let mut crf2 = crf.clone();
        crf2.black_level = 191.0;
        assert!((noise_floor_snr(&lr2, &crf2) - 2.04).abs() < 0.005);
        lr2.v_min = crf2.black_level;
        assert_eq!(noise_floor_snr(&lr2, &crf2), 1.0);
    }

    #[test]
    fn invert_examples() {
        let crf = reference_crf();
        assert_relative_eq!(invert_crf(&crf, 18573.6), 10_000.0, max_relative = 1e-12);
        assert_eq!(invert_crf(&crf, 65535.0), 1e6);
        assert_eq!(invert_crf(&crf, 64537.9), 1e6);
        assert_eq!(invert_crf(&crf, 100.0), 0.0);
        assert_eq!(invert_crf(&crf, 191.3), 0.0);
        // linear bottom segment
        assert_relative_eq!(invert_crf(&crf, (191.3 + 285.5) / 2.0), 15.8, epsilon = 1e-9);
    }

    #[test]
    fn lut_matches_direct_inverse() {
        let crf = reference_crf();
        let inv = crf.inverse();
        for code in (0..=65535u16).step_by(97) {
            assert_eq!(inv.at_code(code), invert_crf(&crf, f64::from(code)));
        }
    }

    #[test]
    fn non_monotone_flagged() {
        let mut crf = reference_crf();
        crf.entries[7].v_avg = crf.entries[6].v_avg + 1.0;
        assert!(matches!(crf.check_monotone(), Err(CalibrationError::NonMonotoneCrf { .. })));
        // inverse stays nondecreasing
        let inv = crf.inverse();
        assert!(inv.nodes().windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let text = reference_crf().to_csv();
        assert_eq!(CrfTable::from_csv(&text).unwrap().to_csv(), text);
        assert_eq!(CrfTable::from_csv(&text).unwrap(), reference_crf());
    }

    #[test]
    fn linear_range_key_values_round_trip() {
        let lr = extract_linear_range(&reference_crf(), DEFAULT_SLOPE_TOLERANCE).unwrap();
        let kv = KeyValues::parse(&lr.to_key_values().to_text("lr")).unwrap();
        assert_eq!(LinearRange::from_key_values(&kv).unwrap(), lr);
    }

    proptest! {
        #[test]
        fn invert_is_monotone(a in 0.0f64..65535.0, b in 0.0f64..65535.0) {
            let crf = reference_crf();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(invert_crf(&crf, lo) <= invert_crf(&crf, hi));
        }

        #[test]
        fn window_invariant_to_irradiance_scale(k in 1e-3f64..1e3) {
            let base = extract_linear_range(&reference_crf(), DEFAULT_SLOPE_TOLERANCE).unwrap();
            let mut crf = reference_crf();
            for e in &mut crf.entries {
                e.irradiance *= k;
            }
            let lr = extract_linear_range(&crf, DEFAULT_SLOPE_TOLERANCE).unwrap();
            prop_assert_eq!((lr.v_max, lr.v_min, lr.bright_db, lr.dim_db), (base.v_max, base.v_min, base.bright_db, base.dim_db));
            prop_assert!((lr.ldr_e - base.ldr_e).abs() < 1e-12);
        }

        #[test]
        fn round_trip_through_simulator(db in 32.0f64..84.0) {
            let cfg = default_sensor().noiseless();
            let crf = reference_crf();
            let irr = attenuate(1e6, db);
            let v = sensor::mean_response(&cfg, irr, cfg.reference_exposure).unwrap();
            prop_assert!((invert_crf(&crf, v) / irr - 1.0).abs() < 0.02);
        }
    }
}
