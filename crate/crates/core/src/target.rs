//! Multi-patch calibration and test targets rendered as irradiance maps.
//!
//! A target is a grid of uniform discs on a black background. Patch `k`
//! (row-major) gets `peak * 10^(-dB_k / 20)`, so the ground-truth dynamic
//! range between any two patches is known analytically.

use thiserror::Error;

use crate::image::IrradianceMap;
use crate::io::keyvalue::join_list;
use crate::io::{ConfigError, KeyValues};

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error("layout overflow: {0}")]
    LayoutOverflow(String),
    #[error("invalid target spec: {0}")]
    InvalidSpec(String),
}

/// Irradiance of a patch attenuated by `db` relative to `peak`.
pub fn attenuate(peak: f64, db: f64) -> f64 {
    peak * 10f64.powf(-db / 20.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    /// Attenuation per patch, assigned to grid cells row-major.
    pub db_values: Vec<f64>,
    /// Irradiance of the 0 dB patch.
    pub peak_irradiance: f64,
    /// Dynamic range the target is meant to certify; defaults to the
    /// largest attenuation.
    pub intended_hdr_db: Option<f64>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub width: usize,
    pub height: usize,
    /// Disc radius, pixels.
    pub radius: f64,
    /// Center-to-center spacing, pixels.
    pub pitch: f64,
    pub background_irradiance: f64,
    /// Minimum fraction of the frame each patch must cover.
    pub min_patch_fraction: f64,
}

/// 16 patches, 0..=90 dB, the CRF calibration chart.
pub fn calibration_target_90db() -> TargetSpec {
    TargetSpec::grid4x4(vec![
        0.0, 8.0, 14.0, 18.0, 28.0, 32.0, 36.0, 40.0, 44.0, 52.0, 58.0, 64.0, 70.0, 78.0, 84.0, 90.0,
    ])
}

/// 16 patches, 0..=78 dB, the two-exposure recovery chart.
pub fn test_target_78db() -> TargetSpec {
    TargetSpec::grid4x4(vec![
        0.0, 8.0, 14.0, 20.0, 26.0, 32.0, 36.0, 40.0, 44.0, 50.0, 56.0, 60.0, 64.0, 68.0, 74.0, 78.0,
    ])
}

const KEYS: &[&str] = &[
    "db_values",
    "peak_irradiance",
    "intended_hdr_db",
    "grid_rows",
    "grid_cols",
    "width",
    "height",
    "radius",
    "pitch",
    "background_irradiance",
    "min_patch_fraction",
];

impl TargetSpec {
    fn grid4x4(db_values: Vec<f64>) -> Self {
        Self {
            db_values,
            peak_irradiance: 1e6,
            intended_hdr_db: None,
            grid_rows: 4,
            grid_cols: 4,
            width: 512,
            height: 512,
            radius: 40.0,
            pitch: 128.0,
            background_irradiance: 0.0,
            min_patch_fraction: 1e-3,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "calibration-90db" | "calibration" => Some(calibration_target_90db()),
            "test-78db" | "test" => Some(test_target_78db()),
            _ => None,
        }
    }

    pub fn max_db(&self) -> f64 {
        self.db_values.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        let bad = |m: String| Err(TargetError::InvalidSpec(m));
        if self.db_values.is_empty() {
            return bad("no patches".into());
        }
        if self.db_values.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("design dB values must be finite and >= 0".into());
        }
        let zeros = self.db_values.iter().filter(|&&d| d == 0.0).count();
        if zeros != 1 {
            return bad(format!("exactly one 0 dB patch required, found {zeros}"));
        }
        if !(self.peak_irradiance > 0.0 && self.peak_irradiance.is_finite()) {
            return bad("peak irradiance must be > 0".into());
        }
        if !(self.background_irradiance >= 0.0) {
            return bad("background irradiance must be >= 0".into());
        }
        let hdr = self.intended_hdr_db.unwrap_or_else(|| self.max_db());
        if self.max_db() < hdr {
            return bad(format!("largest attenuation {} dB below intended {hdr} dB", self.max_db()));
        }
        // near-6 dB steps across the range
        if (self.db_values.len() as f64) < hdr / 6.0 - 1e-9 {
            return bad(format!("{} zones cannot cover {hdr} dB in ~6 dB steps", self.db_values.len()));
        }
        if self.db_values.len() > self.grid_rows * self.grid_cols {
            return Err(TargetError::LayoutOverflow(format!(
                "{} patches do not fit a {}x{} grid",
                self.db_values.len(),
                self.grid_rows,
                self.grid_cols
            )));
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.check_keys(KEYS)?;
        let d = test_target_78db();
        Ok(Self {
            db_values: kv.parse_list("db_values")?.unwrap_or(d.db_values),
            peak_irradiance: kv.parse_or("peak_irradiance", d.peak_irradiance)?,
            intended_hdr_db: kv.parse_opt("intended_hdr_db")?,
            grid_rows: kv.parse_or("grid_rows", d.grid_rows)?,
            grid_cols: kv.parse_or("grid_cols", d.grid_cols)?,
            width: kv.parse_or("width", d.width)?,
            height: kv.parse_or("height", d.height)?,
            radius: kv.parse_or("radius", d.radius)?,
            pitch: kv.parse_or("pitch", d.pitch)?,
            background_irradiance: kv.parse_or("background_irradiance", d.background_irradiance)?,
            min_patch_fraction: kv.parse_or("min_patch_fraction", d.min_patch_fraction)?,
        })
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("db_values", join_list(&self.db_values));
        kv.push("peak_irradiance", self.peak_irradiance);
        if let Some(h) = self.intended_hdr_db {
            kv.push("intended_hdr_db", h);
        }
        kv.push("grid_rows", self.grid_rows);
        kv.push("grid_cols", self.grid_cols);
        kv.push("width", self.width);
        kv.push("height", self.height);
        kv.push("radius", self.radius);
        kv.push("pitch", self.pitch);
        kv.push("background_irradiance", self.background_irradiance);
        kv.push("min_patch_fraction", self.min_patch_fraction);
        kv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Pixel coordinates of the disc center.
    pub center: (f64, f64),
    pub radius: f64,
    pub design_db: f64,
}

impl Patch {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 - self.center.0;
        let dy = y as f64 - self.center.1;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Inclusive pixel bounding box `(x0, y0, x1, y1)`, may extend past the
    /// frame for out-of-bounds discs.
    pub fn bounds(&self) -> (i64, i64, i64, i64) {
        (
            (self.center.0 - self.radius).ceil() as i64,
            (self.center.1 - self.radius).ceil() as i64,
            (self.center.0 + self.radius).floor() as i64,
            (self.center.1 + self.radius).floor() as i64,
        )
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        let (x0, y0, x1, y1) = self.bounds();
        x0 >= 0 && y0 >= 0 && x1 < width as i64 && y1 < height as i64
    }

    /// Row-major indices of every pixel inside the disc. Caller ensures the
    /// disc fits the frame.
    pub fn pixel_indices(&self, width: usize) -> Vec<usize> {
        let (x0, y0, x1, y1) = self.bounds();
        let mut out = Vec::new();
        for y in y0.max(0) as usize..=y1.max(0) as usize {
            for x in x0.max(0) as usize..=x1.max(0) as usize {
                if self.contains(x, y) {
                    out.push(y * width + x);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patches: Vec<Patch>,
    pub background_irradiance: f64,
    pub width: usize,
    pub height: usize,
}

impl PatchLayout {
    /// Index of the 0 dB (brightest) patch.
    pub fn reference_patch(&self) -> Option<usize> {
        self.patches.iter().position(|p| p.design_db == 0.0)
    }

    /// Background pixels at least `margin` pixels outside every disc.
    pub fn background_indices(&self, margin: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let clear = self.patches.iter().all(|p| {
                    let dx = x as f64 - p.center.0;
                    let dy = y as f64 - p.center.1;
                    let r = p.radius + margin;
                    dx * dx + dy * dy > r * r
                });
                if clear {
                    out.push(y * self.width + x);
                }
            }
        }
        out
    }
}

pub fn render_target(spec: &TargetSpec) -> Result<(IrradianceMap, PatchLayout), TargetError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mid_col = (spec.grid_cols as f64 - 1.0) / 2.0;
    let mid_row = (spec.grid_rows as f64 - 1.0) / 2.0;
    let patches: Vec<Patch> = spec
        .db_values
        .iter()
        .enumerate()
        .map(|(k, &db)| {
            let (row, col) = (k / spec.grid_cols, k % spec.grid_cols);
            Patch {
                center: (
                    (w as f64 - 1.0) / 2.0 + (col as f64 - mid_col) * spec.pitch,
                    (h as f64 - 1.0) / 2.0 + (row as f64 - mid_row) * spec.pitch,
                ),
                radius: spec.radius,
                design_db: db,
            }
        })
        .collect();

    if spec.pitch <= 2.0 * spec.radius && patches.len() > 1 {
        return Err(TargetError::LayoutOverflow(format!(
            "pitch {} does not separate discs of radius {}",
            spec.pitch, spec.radius
        )));
    }
    let min_pixels = spec.min_patch_fraction * (w * h) as f64;
    let mut values = vec![spec.background_irradiance; w * h];
    for p in &patches {
        if !p.fits(w, h) {
            return Err(TargetError::LayoutOverflow(format!(
                "{} dB disc at {:?} leaves the {w}x{h} frame",
                p.design_db, p.center
            )));
        }
        let idx = p.pixel_indices(w);
        if (idx.len() as f64) < min_pixels {
            return Err(TargetError::LayoutOverflow(format!(
                "patch covers {} pixels, below the {min_pixels:.0} floor",
                idx.len()
            )));
        }
        let irr = attenuate(spec.peak_irradiance, p.design_db);
        for i in idx {
            values[i] = irr;
        }
    }
    let layout = PatchLayout {
        grid_rows: spec.grid_rows,
        grid_cols: spec.grid_cols,
        patches,
        background_irradiance: spec.background_irradiance,
        width: w,
        height: h,
    };
    Ok((IrradianceMap::from_values_unchecked(w, h, values), layout))
}

/// Global illumination change: multiplies every pixel by `factor`.
pub fn scale_illumination(map: &IrradianceMap, factor: f64) -> Result<IrradianceMap, TargetError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(TargetError::InvalidSpec(format!("illumination factor {factor} must be > 0")));
    }
    let values = map.values().iter().map(|v| v * factor).collect();
    Ok(IrradianceMap::from_values_unchecked(map.width(), map.height(), values))
}
