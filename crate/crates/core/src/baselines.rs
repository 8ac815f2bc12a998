//! Weighted multi-exposure merges used for comparison.
//!
//! All four read the same [`CrfTable`] as the proposed method but use the
//! full output range of every exposure, combining per-exposure irradiance
//! estimates with a per-code weight.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::calibration::{CrfInverse, CrfTable, LinearRange};
use crate::fusion::{check_ladder, fuse_ladder, FusionError, FusionOutput, Sentinel};
use crate::image::{max_code, IrradianceMap, RawImage};

/// Default Gaussian width parameter.
pub const DEFAULT_GAUSSIAN_W: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    SlopeWeight,
    Hat,
    Snr,
    GaussianTime,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::SlopeWeight, Variant::Hat, Variant::Snr, Variant::GaussianTime];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SlopeWeight => "slope_weight",
            Variant::Hat => "hat",
            Variant::Snr => "snr",
            Variant::GaussianTime => "gaussian_time",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown weighting scheme '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightingScheme {
    pub variant: Variant,
    /// Gaussian width, used by [`Variant::GaussianTime`] only.
    pub w_param: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub z_mid: f64,
}

impl WeightingScheme {
    pub fn new(variant: Variant, bit_depth: u32) -> Self {
        let full = f64::from(max_code(bit_depth));
        Self { variant, w_param: DEFAULT_GAUSSIAN_W, z_min: 0.0, z_max: full, z_mid: (full + 1.0) / 2.0 }
    }

    pub fn with_w(mut self, w: f64) -> Self {
        self.w_param = w;
        self
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.z_min < self.z_mid && self.z_mid < self.z_max) {
            return Err(FusionError::Invalid(format!(
                "need z_min < z_mid < z_max, got {} {} {}",
                self.z_min, self.z_mid, self.z_max
            )));
        }
        if !(self.w_param > 0.0) {
            return Err(FusionError::Invalid(format!("W must be > 0, got {}", self.w_param)));
        }
        Ok(())
    }
}

fn hat(s: &WeightingScheme, z: f64) -> f64 {
    if z <= 0.5 * (s.z_min + s.z_max) {
        z - s.z_min
    } else {
        s.z_max - z
    }
}

fn gaussian(s: &WeightingScheme, z: f64) -> f64 {
    let g = |z: f64| (-s.w_param * (z - s.z_mid).powi(2) / s.z_mid.powi(2)).exp();
    // remove the line through both end values, then rescale to 1 at z_mid
    let (g0, g1) = (g(s.z_min), g(s.z_max));
    let base = |z: f64| g0 + (g1 - g0) * (z - s.z_min) / (s.z_max - s.z_min);
    (g(z) - base(z)) / (g(s.z_mid) - base(s.z_mid))
}

/// Unnormalized CRF-derived weight; `log_domain` picks `dv/dlog10 I`
/// (slope) over `I dv/dI` (snr).
fn crf_weight(inv: &CrfInverse, z: f64, log_domain: bool) -> f64 {
    let Some(i) = inv.segment(z) else { return 0.0 };
    if z >= inv.top().0 {
        return 0.0;
    }
    let (va, ia) = inv.nodes()[i];
    let (vb, ib) = inv.nodes()[i + 1];
    let dv_di = (vb - va) / (ib - ia);
    if log_domain && ia > 0.0 {
        (vb - va) / (ib.log10() - ia.log10())
    } else if log_domain {
        dv_di * inv.eval(z) * std::f64::consts::LN_10
    } else {
        inv.eval(z) * dv_di
    }
}

/// Per-code weight table `w[0..=2^A-1]`.
pub fn weight_table(scheme: &WeightingScheme, crf: &CrfTable) -> Vec<f64> {
    let full = max_code(crf.bit_depth);
    let codes = (0..=full).map(f64::from);
    match scheme.variant {
        Variant::Hat => codes.map(|z| hat(scheme, z)).collect(),
        Variant::GaussianTime => codes.map(|z| gaussian(scheme, z).max(0.0)).collect(),
        Variant::SlopeWeight | Variant::Snr => {
            let inv = crf.inverse();
            let log_domain = scheme.variant == Variant::SlopeWeight;
            let raw: Vec<f64> = codes.map(|z| crf_weight(&inv, z, log_domain)).collect();
            let peak = raw.iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                raw.into_iter().map(|w| w / peak).collect()
            } else {
                raw
            }
        }
    }
}

/// Weight of a single output value.
pub fn weight(scheme: &WeightingScheme, z: f64, crf: &CrfTable) -> f64 {
    match scheme.variant {
        Variant::Hat => hat(scheme, z),
        Variant::GaussianTime => gaussian(scheme, z).max(0.0),
        Variant::SlopeWeight | Variant::Snr => {
            let inv = crf.inverse();
            let log_domain = scheme.variant == Variant::SlopeWeight;
            let peak =
                (0..=max_code(crf.bit_depth)).map(|c| crf_weight(&inv, f64::from(c), log_domain)).fold(0.0, f64::max);
            if peak > 0.0 {
                crf_weight(&inv, z, log_domain) / peak
            } else {
                0.0
            }
        }
    }
}

fn sorted_ladder(images: &[RawImage]) -> Vec<RawImage> {
    let mut sorted = images.to_vec();
    sorted.sort_by(|a, b| a.exposure_time().total_cmp(&b.exposure_time()));
    sorted
}

/// Full-range weighted merge with one of the comparison schemes.
pub fn merge_weighted(
    images: &[RawImage],
    crf: &CrfTable,
    scheme: &WeightingScheme,
) -> Result<FusionOutput, FusionError> {
    scheme.validate()?;
    if images.len() < 2 {
        return Err(FusionError::PlanMismatch(format!("need >= 2 images, got {}", images.len())));
    }
    let owned = sorted_ladder(images);
    check_ladder(&owned)?;

    let inverse = crf.inverse();
    let table = weight_table(scheme, crf);
    let t_ref = owned[owned.len() - 1].exposure_time();
    let times: Vec<f64> = owned.iter().map(RawImage::exposure_time).collect();
    let epsilon = inverse.eval(inverse.black_level() + 1.0);
    let variant = scheme.variant;

    let n = owned[0].samples().len();
    let merged: Vec<(f64, u8)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut num, mut den, mut plain, mut used) = (0.0, 0.0, 0.0, 0u32);
            for (img, &t) in owned.iter().zip(&times) {
                let code = img.samples()[i];
                let est = inverse.at_code(code) * (t_ref / t);
                let w = table[code as usize];
                let (value, w) = match variant {
                    Variant::Hat => (est.max(epsilon).ln(), w),
                    Variant::GaussianTime => (est, w * t * t),
                    Variant::SlopeWeight | Variant::Snr => (est, w),
                };
                num += w * value;
                den += w;
                plain += value;
                if w > 0.0 {
                    used += 1;
                }
            }
            let mean = if den > 0.0 { num / den } else { plain / times.len() as f64 };
            let out = if variant == Variant::Hat { mean.exp() } else { mean };
            (out, used.min(255) as u8)
        })
        .collect();

    let (radiance, validity): (Vec<f64>, Vec<u8>) = merged.into_iter().unzip();
    Ok(FusionOutput {
        radiance: IrradianceMap::from_values_unchecked(owned[0].width(), owned[0].height(), radiance),
        validity_count: validity,
        sentinel_mask: vec![Sentinel::Ok; n],
    })
}

/// The proposed validity filter over an arbitrary ascending ladder.
pub fn proposed_with_n_images(
    images: &[RawImage],
    crf: &CrfTable,
    lr: &LinearRange,
) -> Result<FusionOutput, FusionError> {
    fuse_ladder(&sorted_ladder(images), crf, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{extract_linear_range, DEFAULT_SLOPE_TOLERANCE};
    use crate::golden;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_crf() -> CrfTable {
        CrfTable::from_csv(golden::REFERENCE_CRF_CSV).unwrap()
    }

    fn scheme(v: Variant) -> WeightingScheme {
        WeightingScheme::new(v, 16)
    }

    #[test]
    fn hat_values() {
        let crf = reference_crf();
        let s = scheme(Variant::Hat);
        assert_eq!(weight(&s, 1000.0, &crf), 1000.0);
        assert_eq!(weight(&s, 40000.0, &crf), 25535.0);
        assert_eq!(weight(&s, 0.0, &crf), 0.0);
        assert_eq!(weight(&s, 65535.0, &crf), 0.0);
    }

    #[test]
    fn gaussian_shape() {
        let crf = reference_crf();
        let s = scheme(Variant::GaussianTime);
        assert_eq!(s.z_mid, 32768.0);
        assert!(weight(&s, 0.0, &crf).abs() < 1e-12);
        assert!(weight(&s, 65535.0, &crf).abs() < 1e-12);
        assert!((weight(&s, 32768.0, &crf) - 1.0).abs() < 1e-12);
        let closed = ((-1f64).exp() - (-4f64).exp()) / (1.0 - (-4f64).exp());
        assert!((weight(&s, 16384.0, &crf) - closed).abs() < 1e-6);
    }

    #[test]
    fn crf_weights_vanish_outside_table() {
        let crf = reference_crf();
        for v in [Variant::SlopeWeight, Variant::Snr] {
            let t = weight_table(&scheme(v), &crf);
            assert_eq!(t[65535], 0.0);
            assert_eq!(t[100], 0.0);
            assert_eq!(t[191], 0.0);
            let peak = t.iter().copied().fold(0.0, f64::max);
            assert_relative_eq!(peak, 1.0, max_relative = 1e-12);
            assert!(t.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn slope_weight_peaks_on_steepest_log_segment() {
        let crf = reference_crf();
        let t = weight_table(&scheme(Variant::SlopeWeight), &crf);
        // 36 -> 32 dB climbs 10923 counts over 4 dB, the steepest in log I
        assert_relative_eq!(t[30000], 1.0, max_relative = 1e-12);
        assert_relative_eq!(t[20000], 7990.0 / 10923.0, max_relative = 1e-4);
        assert!(t[50000] < t[30000]);
    }

    #[test]
    fn scalar_and_table_agree() {
        let crf = reference_crf();
        for v in Variant::ALL {
            let s = scheme(v);
            let t = weight_table(&s, &crf);
            for z in [0u16, 250, 1438, 20000, 37486, 52046, 64537, 65535] {
                assert_eq!(t[z as usize], weight(&s, f64::from(z), &crf), "{v} at {z}");
            }
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("rank".parse::<Variant>().is_err());
    }

    fn image(t: f64, samples: Vec<u16>) -> RawImage {
        let n = samples.len();
        RawImage::new(n, 1, 16, t, samples).unwrap()
    }

    #[test]
    fn identical_images_invert_directly() {
        let crf = reference_crf();
        let samples = vec![0, 191, 300, 5000, 30000, 50000, 65535];
        let imgs = [image(1e-3, samples.clone()), image(1e-3 * (1.0 + 1e-12), samples.clone())];
        let inv = crf.inverse();
        // exposures must differ, so the second one is longer by a rounding-level step
        for v in Variant::ALL {
            let out = merge_weighted(&imgs, &crf, &scheme(v)).unwrap();
            for (k, &z) in samples.iter().enumerate() {
                let expect = inv.at_code(z);
                let got = out.radiance.values()[k];
                if v == Variant::Hat && expect == 0.0 {
                    assert!(got > 0.0 && got <= inv.eval(192.3));
                } else {
                    assert_relative_eq!(got, expect, max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_single_and_duplicate_exposures() {
        let crf = reference_crf();
        let a = image(1e-3, vec![1000]);
        for v in Variant::ALL {
            assert!(matches!(
                merge_weighted(std::slice::from_ref(&a), &crf, &scheme(v)),
                Err(FusionError::PlanMismatch(_))
            ));
            assert!(matches!(
                merge_weighted(&[a.clone(), a.clone()], &crf, &scheme(v)),
                Err(FusionError::PlanMismatch(_))
            ));
        }
    }

    #[test]
    fn two_image_proposed_matches_fuse() {
        let crf = reference_crf();
        let lr = extract_linear_range(&crf, DEFAULT_SLOPE_TOLERANCE).unwrap();
        let plan = crate::fusion::plan_exposures(79.0, lr.ldr_e, 1e-4, (29e-6, 1.0)).unwrap();
        let imgs = [
            image(plan.exposure_times[0], vec![200, 1000, 40000, 65535]),
            image(plan.exposure_times[1], vec![800, 30000, 65535, 65535]),
        ];
        let a = crate::fusion::fuse(&imgs, &crf, &lr, &plan).unwrap();
        let b = proposed_with_n_images(&[imgs[1].clone(), imgs[0].clone()], &crf, &lr).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn order_invariant(codes in prop::collection::vec(prop::collection::vec(any::<u16>(), 8), 3), rot in 0usize..3) {
            let crf = reference_crf();
            let imgs: Vec<RawImage> = codes
                .iter()
                .enumerate()
                .map(|(k, c)| image(1e-4 * 4f64.powi(k as i32), c.clone()))
                .collect();
            let mut shuffled = imgs.clone();
            shuffled.rotate_left(rot);
            for v in Variant::ALL {
                let a = merge_weighted(&imgs, &crf, &scheme(v)).unwrap();
                let b = merge_weighted(&shuffled, &crf, &scheme(v)).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn weights_nonnegative(z in 0u16..=65535) {
            let crf = reference_crf();
            for v in Variant::ALL {
                prop_assert!(weight(&scheme(v), f64::from(z), &crf) >= 0.0);
            }
        }
    }
}
