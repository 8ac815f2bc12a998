//! Calibrated linear HDR imaging with a minimal number of exposures.
//!
//! The pipeline measures a camera response from one shot of a multi-patch
//! target ([`calibration`]), keeps only the output window where the response
//! is linear, plans the fewest exposures covering a design dynamic range and
//! fuses them without per-pixel weights ([`fusion`]). [`baselines`] holds the
//! weighted merges it is compared against, [`sensor`] and [`target`] the
//! simulated camera and charts used in place of hardware.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod calibration;
pub mod fusion;
pub mod golden;
pub mod image;
pub mod io;
pub mod report;
pub mod sensor;
pub mod target;

use thiserror::Error;

pub use calibration::{CrfTable, LinearRange};
pub use fusion::{ExposurePlan, FusionOutput};
pub use image::{IrradianceMap, RawImage};
pub use sensor::SensorConfig;
pub use target::TargetSpec;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Config(#[from] io::ConfigError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Sensor(#[from] sensor::SensorError),
    #[error(transparent)]
    Target(#[from] target::TargetError),
    #[error(transparent)]
    Calibration(#[from] calibration::CalibrationError),
    #[error(transparent)]
    Fusion(#[from] fusion::FusionError),
}

impl Error {
    /// Process exit status: 1 for infeasible plans and algorithm failures,
    /// 2 for I/O and configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Config(_) | Error::Target(_) => 2,
            Error::Sensor(sensor::SensorError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}
