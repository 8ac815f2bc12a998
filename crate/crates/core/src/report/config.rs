//! Experiment config file: `key = value` pairs naming the sensor, targets,
//! illumination and plan inputs. Relative paths resolve against the
//! config file's directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::{Variant, DEFAULT_GAUSSIAN_W};
use crate::calibration::DEFAULT_SLOPE_TOLERANCE;
use crate::fusion::PlanAnchor;
use crate::golden;
use crate::io::{self, ConfigError, IoError, KeyValues};
use crate::sensor::{default_sensor, SensorConfig};
use crate::target::TargetSpec;

/// Illumination factors of the default sweep: the light-box settings of the
/// reference camera run (68 klx down to 683 lx) relative to the brightest.
pub const DEFAULT_SWEEP_FACTORS: [f64; 8] = [
    1.0,
    60_000.0 / 68_000.0,
    30_000.0 / 68_000.0,
    20_430.0 / 68_000.0,
    0.1,
    0.05,
    1_368.0 / 68_000.0,
    683.0 / 68_000.0,
];

const KEYS: &[&str] = &[
    "sensor",
    "calibration_target",
    "test_target",
    "illumination_factor",
    "hdr_d",
    "exposure_ladder",
    "plan_anchor",
    "compare_ladder",
    "slope_tolerance",
    "algorithm",
    "gaussian_w",
    "sweep_factors",
    "calibration_dir",
    "out_dir",
    "seed",
];

/// Fusion algorithm used by `recover`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Proposed,
    Baseline(Variant),
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Proposed => "proposed",
            Algorithm::Baseline(v) => v.name(),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "proposed" {
            Ok(Algorithm::Proposed)
        } else {
            s.parse().map(Algorithm::Baseline)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanInput {
    /// Plan from a design range; `None` takes the test target's.
    Design { hdr_d: Option<f64>, anchor: PlanAnchor },
    /// Fixed exposure times, seconds.
    Ladder(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sensor: SensorConfig,
    pub calibration_target: TargetSpec,
    pub test_target: TargetSpec,
    pub illumination_factor: f64,
    pub plan: PlanInput,
    pub compare_ladder: Vec<f64>,
    pub slope_tolerance: f64,
    pub algorithm: Algorithm,
    pub gaussian_w: f64,
    pub sweep_factors: Vec<f64>,
    /// Where `crf.csv` and `linear_range.txt` are read from; defaults to
    /// `out_dir`.
    pub calibration_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sensor = default_sensor();
        Self {
            seed: sensor.rng_seed,
            sensor,
            calibration_target: crate::target::calibration_target_90db(),
            test_target: crate::target::test_target_78db(),
            illumination_factor: 1.0,
            plan: PlanInput::Design { hdr_d: None, anchor: PlanAnchor::Shortest },
            compare_ladder: golden::ladder16(),
            slope_tolerance: DEFAULT_SLOPE_TOLERANCE,
            algorithm: Algorithm::Proposed,
            gaussian_w: DEFAULT_GAUSSIAN_W,
            sweep_factors: DEFAULT_SWEEP_FACTORS.to_vec(),
            calibration_dir: None,
            out_dir: PathBuf::from("hdrcal-out"),
        }
    }
}

fn bad(key: &str, value: &str) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), value: value.to_string() }
}

fn load_target(value: &str, base: &Path) -> Result<TargetSpec, IoError> {
    if let Some(spec) = TargetSpec::builtin(value) {
        return Ok(spec);
    }
    let kv = KeyValues::parse(&io::read_text(&base.join(value))?)?;
    let spec = TargetSpec::from_key_values(&kv)?;
    Ok(spec)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = io::read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, IoError> {
        let kv = KeyValues::parse(text)?;
        kv.check_keys(KEYS)?;
        let mut cfg = Self::default();

        if let Some(s) = kv.get("sensor") {
            if s != "default" {
                let skv = KeyValues::parse(&io::read_text(&base.join(s))?)?;
                cfg.sensor = SensorConfig::from_key_values(&skv)?;
            }
        }
        cfg.seed = cfg.sensor.rng_seed;
        if let Some(s) = kv.get("calibration_target") {
            cfg.calibration_target = load_target(s, base)?;
        }
        if let Some(s) = kv.get("test_target") {
            cfg.test_target = load_target(s, base)?;
        }
        cfg.illumination_factor = kv.parse_or("illumination_factor", 1.0)?;

        let anchor = match kv.get("plan_anchor") {
            None | Some("shortest") => PlanAnchor::Shortest,
            Some("longest") => PlanAnchor::Longest,
            Some(other) => return Err(bad("plan_anchor", other).into()),
        };
        cfg.plan = match (kv.parse_opt::<f64>("hdr_d")?, kv.parse_list::<f64>("exposure_ladder")?) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid("give either hdr_d or exposure_ladder, not both".into()).into())
            }
            (_, Some(ladder)) => PlanInput::Ladder(ladder),
            (hdr_d, None) => PlanInput::Design { hdr_d, anchor },
        };
        if let Some(l) = kv.parse_list("compare_ladder")? {
            cfg.compare_ladder = l;
        }
        cfg.slope_tolerance = kv.parse_or("slope_tolerance", DEFAULT_SLOPE_TOLERANCE)?;
        if let Some(a) = kv.get("algorithm") {
            cfg.algorithm = a.parse().map_err(|_| bad("algorithm", a))?;
        }
        cfg.gaussian_w = kv.parse_or("gaussian_w", DEFAULT_GAUSSIAN_W)?;
        if let Some(f) = kv.parse_list("sweep_factors")? {
            cfg.sweep_factors = f;
        }
        cfg.calibration_dir = kv.get("calibration_dir").map(|d| base.join(d));
        if let Some(d) = kv.get("out_dir") {
            cfg.out_dir = base.join(d);
        }
        if let Some(seed) = kv.parse_opt("seed")? {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.sensor.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.calibration_target.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.test_target.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.illumination_factor > 0.0 && self.illumination_factor.is_finite()) {
            return invalid(format!("illumination_factor must be > 0, got {}", self.illumination_factor));
        }
        if let PlanInput::Ladder(l) = &self.plan {
            if l.is_empty() || l.windows(2).any(|w| w[1] <= w[0]) {
                return invalid("exposure_ladder must be non-empty and strictly ascending".into());
            }
        }
        if self.compare_ladder.len() < 2 || self.compare_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("compare_ladder needs >= 2 strictly ascending exposures".into());
        }
        if !(self.slope_tolerance > 0.0) {
            return invalid("slope_tolerance must be > 0".into());
        }
        if self.sweep_factors.iter().any(|f| !(*f > 0.0)) {
            return invalid("sweep_factors must all be > 0".into());
        }
        Ok(())
    }

    /// Sensor with the run seed applied.
    pub fn seeded_sensor(&self) -> SensorConfig {
        SensorConfig { rng_seed: self.seed, ..self.sensor.clone() }
    }

    pub fn calibration_dir(&self) -> &Path {
        self.calibration_dir.as_deref().unwrap_or(&self.out_dir)
    }

    pub fn design_range(&self) -> f64 {
        match &self.plan {
            PlanInput::Design { hdr_d: Some(d), .. } => *d,
            _ => self.test_target.intended_hdr_db.unwrap_or_else(|| self.test_target.max_db()),
        }
    }
}
