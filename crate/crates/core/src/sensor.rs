//! Synthetic CMOS camera.
//!
//! The mean response is table driven: nodes `(H, v)` with exposure product
//! `H = I_s * t / T_ref`, interpolated piecewise-linearly in `(log10 H, v)`.
//! On top of the mean sit Gaussian read + shot noise, quantization, and a
//! logistic "saturated pixel triggering" anomaly that forces a small fraction
//! of bright pixels to full scale even though their mean is below it.
//!
//! Every pixel draws from its own ChaCha stream keyed by `(seed, index)`, so
//! a capture is bit-identical regardless of thread scheduling, and two
//! captures sharing a seed see the same noise realization (common random
//! numbers), which keeps exposure searches monotone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::golden;
use crate::image::{max_code, ImageError, IrradianceMap, RawImage};
use crate::io::keyvalue::{join_list, parse_list};
use crate::io::{ConfigError, KeyValues};

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("exposure {t} s outside sensor limits [{min}, {max}] s")]
    ExposureOutOfRange { t: f64, min: f64, max: f64 },
    #[error("irradiance must be finite and >= 0, got {0}")]
    NegativeIrradiance(f64),
    #[error("invalid sensor config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Logistic model for the probability that a pixel reads full scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyModel {
    pub p_max: f64,
    /// Mean response (counts) at which the probability reaches `p_max / 2`.
    pub threshold: f64,
    /// Logistic scale, counts.
    pub steepness: f64,
}

impl AnomalyModel {
    pub const DISABLED: Self = Self { p_max: 0.0, threshold: 0.0, steepness: 1.0 };

    /// `p(m) = p_max / (1 + exp(-(m - threshold) / steepness))`
    pub fn probability(&self, mean: f64) -> f64 {
        if self.p_max == 0.0 {
            return 0.0;
        }
        self.p_max / (1.0 + (-(mean - self.threshold) / self.steepness).exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub bit_depth: u32,
    /// `(H, v)` nodes, strictly increasing; the first is `(0, dark_level)`.
    pub response_curve: Vec<(f64, f64)>,
    /// Exposure the curve was tabulated at, seconds.
    pub reference_exposure: f64,
    pub dark_level: f64,
    pub read_noise_sigma: f64,
    pub shot_noise_coeff: f64,
    pub anomaly: AnomalyModel,
    /// `[T_min, T_max]`, seconds.
    pub exposure_limits: (f64, f64),
    pub rng_seed: u64,
}

/// Shipped camera model: reference calibration response at `T_ref = 3.703 ms`, 16-bit,
/// dark floor 191.3, anomaly tuned so that a calibration capture shows
/// saturated pixels in the 0..=18 dB patches and none from 28 dB down.
pub fn default_sensor() -> SensorConfig {
    let mut curve = vec![(0.0, golden::CALIBRATION_BLACK_LEVEL)];
    curve.extend(golden::CALIBRATION_CRF.iter().rev().map(|&(_, irr, v)| (irr, v)));
    SensorConfig {
        bit_depth: 16,
        response_curve: curve,
        reference_exposure: golden::CALIBRATION_EXPOSURE,
        dark_level: golden::CALIBRATION_BLACK_LEVEL,
        read_noise_sigma: 3.0,
        shot_noise_coeff: 0.5,
        anomaly: AnomalyModel { p_max: 0.012, threshold: 47_600.0, steepness: 400.0 },
        exposure_limits: (29e-6, 1.0),
        rng_seed: 20_201_027,
    }
}

const KEYS: &[&str] = &[
    "bit_depth",
    "reference_exposure",
    "dark_level",
    "read_noise_sigma",
    "shot_noise_coeff",
    "anomaly_p_max",
    "anomaly_threshold",
    "anomaly_steepness",
    "exposure_min",
    "exposure_max",
    "rng_seed",
    "response_node",
];

impl SensorConfig {
    pub fn max_value(&self) -> u16 {
        max_code(self.bit_depth)
    }

    /// Same response with read/shot noise and the anomaly switched off.
    pub fn noiseless(&self) -> Self {
        Self { read_noise_sigma: 0.0, shot_noise_coeff: 0.0, anomaly: AnomalyModel::DISABLED, ..self.clone() }
    }

    pub fn without_anomaly(&self) -> Self {
        Self { anomaly: AnomalyModel::DISABLED, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let bad = |msg: String| Err(SensorError::InvalidConfig(msg));
        if self.bit_depth == 0 || self.bit_depth > 16 {
            return bad(format!("bit_depth {} not in 1..=16", self.bit_depth));
        }
        let full = f64::from(self.max_value());
        let curve = &self.response_curve;
        if curve.len() < 2 {
            return bad("response curve needs at least two nodes".into());
        }
        if curve[0].0 != 0.0 || curve[0].1 != self.dark_level {
            return bad(format!("first response node must be (0, dark_level={}), got {:?}", self.dark_level, curve[0]));
        }
        for w in curve.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return bad(format!("response curve not strictly increasing at {:?}", w[1]));
            }
        }
        if curve.iter().any(|&(h, v)| !h.is_finite() || !v.is_finite()) {
            return bad("response curve has non-finite entries".into());
        }
        if curve[curve.len() - 1].1 > full {
            return bad(format!("last response node exceeds full scale {full}"));
        }
        if !(self.dark_level >= 0.0 && self.dark_level < full) {
            return bad(format!("dark_level {} must be in [0, {full})", self.dark_level));
        }
        if !(0.0..=1.0).contains(&self.anomaly.p_max) {
            return bad(format!("anomaly p_max {} not in [0, 1]", self.anomaly.p_max));
        }
        if !(self.anomaly.steepness > 0.0) {
            return bad("anomaly steepness must be > 0".into());
        }
        if !(self.read_noise_sigma >= 0.0 && self.shot_noise_coeff >= 0.0) {
            return bad("noise parameters must be >= 0".into());
        }
        let (lo, hi) = self.exposure_limits;
        if !(lo > 0.0 && lo < hi) {
            return bad(format!("exposure limits [{lo}, {hi}] must satisfy 0 < T_min < T_max"));
        }
        if !(self.reference_exposure > 0.0) {
            return bad("reference_exposure must be > 0".into());
        }
        Ok(())
    }

    pub fn check_exposure(&self, t: f64) -> Result<(), SensorError> {
        let (min, max) = self.exposure_limits;
        // a hair of slack so that a product like 100 * T_1 computed in
        // floating point is not rejected at the boundary
        let slack = 1e-9;
        if t.is_finite() && t >= min * (1.0 - slack) && t <= max * (1.0 + slack) {
            Ok(())
        } else {
            Err(SensorError::ExposureOutOfRange { t, min, max })
        }
    }

    /// Noise-free output for exposure product `H`.
    pub fn response_at(&self, h: f64) -> f64 {
        let curve = &self.response_curve;
        if h <= 0.0 {
            return curve[0].1;
        }
        let last = curve[curve.len() - 1];
        if h >= last.0 {
            return last.1;
        }
        // first positive node: linear in H towards (0, v_N), log10 H is unbounded there
        let (h1, v1) = curve[1];
        if h < h1 {
            let (h0, v0) = curve[0];
            return v0 + (v1 - v0) * (h - h0) / (h1 - h0);
        }
        let i = curve.partition_point(|&(node, _)| node <= h);
        let (ha, va) = curve[i - 1];
        let (hb, vb) = curve[i];
        let frac = (h.log10() - ha.log10()) / (hb.log10() - ha.log10());
        va + (vb - va) * frac
    }

    pub fn noise_sigma(&self, mean: f64) -> f64 {
        self.read_noise_sigma + self.shot_noise_coeff * (mean - self.dark_level).max(0.0).sqrt()
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.check_keys(KEYS)?;
        let d = default_sensor();
        let mut curve = Vec::new();
        for node in kv.get_all("response_node") {
            let pair: Vec<f64> = parse_list("response_node", node)?;
            if pair.len() != 2 {
                return Err(ConfigError::BadValue { key: "response_node".into(), value: node.to_string() });
            }
            curve.push((pair[0], pair[1]));
        }
        let dark_level = kv.parse_or("dark_level", d.dark_level)?;
        if curve.is_empty() {
            curve = d.response_curve.clone();
            curve[0].1 = dark_level;
        }
        let cfg = Self {
            bit_depth: kv.parse_or("bit_depth", d.bit_depth)?,
            response_curve: curve,
            reference_exposure: kv.parse_or("reference_exposure", d.reference_exposure)?,
            dark_level,
            read_noise_sigma: kv.parse_or("read_noise_sigma", d.read_noise_sigma)?,
            shot_noise_coeff: kv.parse_or("shot_noise_coeff", d.shot_noise_coeff)?,
            anomaly: AnomalyModel {
                p_max: kv.parse_or("anomaly_p_max", d.anomaly.p_max)?,
                threshold: kv.parse_or("anomaly_threshold", d.anomaly.threshold)?,
                steepness: kv.parse_or("anomaly_steepness", d.anomaly.steepness)?,
            },
            exposure_limits: (
                kv.parse_or("exposure_min", d.exposure_limits.0)?,
                kv.parse_or("exposure_max", d.exposure_limits.1)?,
            ),
            rng_seed: kv.parse_or("rng_seed", d.rng_seed)?,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("bit_depth", self.bit_depth);
        kv.push("reference_exposure", self.reference_exposure);
        kv.push("dark_level", self.dark_level);
        kv.push("read_noise_sigma", self.read_noise_sigma);
        kv.push("shot_noise_coeff", self.shot_noise_coeff);
        kv.push("anomaly_p_max", self.anomaly.p_max);
        kv.push("anomaly_threshold", self.anomaly.threshold);
        kv.push("anomaly_steepness", self.anomaly.steepness);
        kv.push("exposure_min", self.exposure_limits.0);
        kv.push("exposure_max", self.exposure_limits.1);
        kv.push("rng_seed", self.rng_seed);
        for &(h, v) in &self.response_curve {
            kv.push("response_node", join_list(&[h, v]));
        }
        kv
    }
}

/// Mean output (counts) for scaled irradiance `irradiance` integrated for `t`
/// seconds.
pub fn mean_response(cfg: &SensorConfig, irradiance: f64, t: f64) -> Result<f64, SensorError> {
    cfg.check_exposure(t)?;
    if !(irradiance >= 0.0) || !irradiance.is_finite() {
        return Err(SensorError::NegativeIrradiance(irradiance));
    }
    Ok(cfg.response_at(irradiance * t / cfg.reference_exposure))
}

/// Simulates one exposure of `scene`.
pub fn capture(cfg: &SensorConfig, scene: &IrradianceMap, t: f64, seed: u64) -> Result<RawImage, SensorError> {
    cfg.check_exposure(t)?;
    let full = cfg.max_value();
    let scale = t / cfg.reference_exposure;
    let base = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<u16> = scene
        .values()
        .par_iter()
        .enumerate()
        .map(|(idx, &irr)| {
            let mean = cfg.response_at(irr * scale);
            let mut rng = base.clone();
            rng.set_stream(idx as u64);
            let u: f64 = rng.random();
            let z: f64 = rng.sample(StandardNormal);
            if u < cfg.anomaly.probability(mean) {
                return full;
            }
            let v = (mean + cfg.noise_sigma(mean) * z).round();
            v.clamp(0.0, f64::from(full)) as u16
        })
        .collect();
    Ok(RawImage::new(scene.width(), scene.height(), cfg.bit_depth, t, samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const T_REF: f64 = 3.703e-3;

    #[test]
    fn default_sensor_constants() {
        let cfg = default_sensor();
        cfg.validate().unwrap();
        assert_eq!(cfg.bit_depth, 16);
        assert_eq!(cfg.reference_exposure, 3.703e-3);
        assert_eq!(cfg.dark_level, 191.3);
    }

    #[test]
    fn mean_response_hits_table_nodes() {
        let cfg = default_sensor();
        assert_relative_eq!(mean_response(&cfg, 1e6, T_REF).unwrap(), 64537.8, epsilon = 1e-9);
        assert_relative_eq!(mean_response(&cfg, 0.0, 1e-3).unwrap(), 191.3, epsilon = 1e-12);
        assert_relative_eq!(mean_response(&cfg, 1e4, T_REF).unwrap(), 18573.6, epsilon = 1e-9);
        // beyond the last node the output stays on the top node
        assert_eq!(mean_response(&cfg, 1e7, T_REF).unwrap(), 64537.8);
    }

    #[test]
    fn log_domain_midpoint() {
        let cfg = default_sensor();
        // geometric mean of the 36 and 40 dB irradiances sits halfway in v
        let h = (15_848.9f64 * 10_000.0).sqrt();
        let expect = (26563.7 + 18573.6) / 2.0;
        assert_relative_eq!(cfg.response_at(h), expect, epsilon = 1e-9);
    }

    #[test]
    fn exposure_limits_enforced() {
        let cfg = default_sensor();
        assert!(matches!(mean_response(&cfg, 1.0, 1e-6), Err(SensorError::ExposureOutOfRange { .. })));
        assert!(mean_response(&cfg, 1.0, 2.0).is_err());
        let scene = IrradianceMap::uniform(2, 2, 1.0).unwrap();
        assert!(capture(&cfg, &scene, 5.0, 1).is_err());
    }

    #[test]
    fn validate_rejects_bad_curves() {
        let mut cfg = default_sensor();
        cfg.response_curve.swap(3, 4);
        assert!(cfg.validate().is_err());
        let mut cfg = default_sensor();
        cfg.anomaly.p_max = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = default_sensor();
        cfg.exposure_limits = (1.0, 0.5);
        assert!(cfg.validate().is_err());
        let mut cfg = default_sensor();
        cfg.response_curve[0].1 = 10.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noiseless_capture_is_rounded_mean() {
        let cfg = default_sensor().noiseless();
        let values: Vec<f64> = (0..64).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
        let scene = IrradianceMap::new(8, 8, values.clone()).unwrap();
        let img = capture(&cfg, &scene, 1e-3, 7).unwrap();
        for (i, &irr) in values.iter().enumerate() {
            let m = mean_response(&cfg, irr, 1e-3).unwrap();
            assert_eq!(img.samples()[i], m.round() as u16);
        }
    }

    #[test]
    fn noiseless_uniform_scene_is_constant() {
        let cfg = default_sensor().noiseless();
        let scene = IrradianceMap::uniform(16, 16, 5_000.0).unwrap();
        let img = capture(&cfg, &scene, 2e-3, 3).unwrap();
        assert!(img.samples().iter().all(|&s| s == img.samples()[0]));
    }

    #[test]
    fn capture_is_deterministic_per_seed() {
        let cfg = default_sensor();
        let scene = IrradianceMap::uniform(32, 32, 2e5).unwrap();
        let a = capture(&cfg, &scene, T_REF, 11).unwrap();
        let b = capture(&cfg, &scene, T_REF, 11).unwrap();
        let c = capture(&cfg, &scene, T_REF, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn anomaly_rate_within_three_binomial_sigma() {
        let cfg = default_sensor();
        // 14 dB calibration patch at T_ref over a 14100-pixel zone
        let irr = 199_526.2;
        let n = 14_100usize;
        let scene = IrradianceMap::uniform(n, 1, irr).unwrap();
        let img = capture(&cfg, &scene, T_REF, 5).unwrap();
        let sat = img.samples().iter().filter(|&&s| s == 65535).count() as f64;
        let p = cfg.anomaly.probability(mean_response(&cfg, irr, T_REF).unwrap());
        let expect = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((sat - expect).abs() <= 3.0 * sd, "{sat} vs {expect} ± {sd}");
        // same operating point as the published 14 dB histogram (169 pixels)
        assert!((expect - 169.0).abs() < 3.0 * sd);
    }

    #[test]
    fn no_anomaly_in_the_28db_patch() {
        let cfg = default_sensor();
        let p = cfg.anomaly.probability(42_901.4);
        assert!(p * 20_000.0 < 0.01, "p = {p}");
    }

    #[test]
    fn key_value_round_trip() {
        let cfg = default_sensor();
        let text = cfg.to_key_values().to_text("sensor");
        let back = SensorConfig::from_key_values(&KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let kv = KeyValues::parse("bit_depht = 16").unwrap();
        assert!(SensorConfig::from_key_values(&kv).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_irradiance(a in 0.0f64..2e6, b in 0.0f64..2e6, t in 29e-6f64..1.0) {
            let cfg = default_sensor();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(mean_response(&cfg, lo, t).unwrap() <= mean_response(&cfg, hi, t).unwrap());
        }

        #[test]
        fn monotone_in_time(irr in 1.0f64..1e6, t1 in 29e-6f64..1.0, t2 in 29e-6f64..1.0) {
            let cfg = default_sensor();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(mean_response(&cfg, irr, lo).unwrap() <= mean_response(&cfg, irr, hi).unwrap());
        }

        #[test]
        fn reciprocity(irr in 0.0f64..1e6, k in 0.1f64..10.0) {
            let cfg = default_sensor();
            let t = 5e-3;
            let a = mean_response(&cfg, irr, t).unwrap();
            let b = mean_response(&cfg, irr * k, t / k).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn output_within_dark_and_full_scale(irr in 0.0f64..1e9, t in 29e-6f64..1.0) {
            let cfg = default_sensor();
            let m = mean_response(&cfg, irr, t).unwrap();
            prop_assert!(m >= cfg.dark_level && m <= 65535.0);
        }
    }
}
