//! Pixel containers shared by the simulator, calibration and fusion stages.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("sample buffer has {got} entries, expected {width}x{height}")]
    SizeMismatch { width: usize, height: usize, got: usize },
    #[error("sample {value} at index {index} exceeds the {bit_depth}-bit range")]
    SampleOutOfRange { index: usize, value: u16, bit_depth: u32 },
    #[error("irradiance at index {index} is negative or not finite ({value})")]
    InvalidIrradiance { index: usize, value: f64 },
    #[error("bit depth {0} is not supported (1..=16)")]
    BitDepth(u32),
}

/// Single-exposure sensor output: row-major `A`-bit samples plus the exposure
/// time the frame was integrated for.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    width: usize,
    height: usize,
    bit_depth: u32,
    exposure_time: f64,
    samples: Vec<u16>,
}

impl RawImage {
    pub fn new(
        width: usize,
        height: usize,
        bit_depth: u32,
        exposure_time: f64,
        samples: Vec<u16>,
    ) -> Result<Self, ImageError> {
        if bit_depth == 0 || bit_depth > 16 {
            return Err(ImageError::BitDepth(bit_depth));
        }
        if samples.len() != width * height {
            return Err(ImageError::SizeMismatch { width, height, got: samples.len() });
        }
        let max = max_code(bit_depth);
        if let Some((index, &value)) = samples.iter().enumerate().find(|(_, &s)| s > max) {
            return Err(ImageError::SampleOutOfRange { index, value, bit_depth });
        }
        Ok(Self { width, height, bit_depth, exposure_time, samples })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    /// Integration time in seconds.
    pub fn exposure_time(&self) -> f64 {
        self.exposure_time
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    /// Full-scale code `2^A - 1`.
    pub fn max_value(&self) -> u16 {
        max_code(self.bit_depth)
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.samples[y * self.width + x]
    }
}

pub(crate) fn max_code(bit_depth: u32) -> u16 {
    ((1u32 << bit_depth) - 1) as u16
}

/// Ground-truth scene: scaled irradiance `I_s` per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl IrradianceMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ImageError> {
        if values.len() != width * height {
            return Err(ImageError::SizeMismatch { width, height, got: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(ImageError::InvalidIrradiance { index, value });
        }
        Ok(Self { width, height, values })
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Copy of the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut values = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            values.extend_from_slice(&self.values[row + x0..row + x0 + w]);
        }
        Self { width: w, height: h, values }
    }

    pub(crate) fn from_values_unchecked(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_image_rejects_out_of_range_samples() {
        let err = RawImage::new(2, 1, 12, 1e-3, vec![0, 4096]).unwrap_err();
        assert_eq!(err, ImageError::SampleOutOfRange { index: 1, value: 4096, bit_depth: 12 });
        assert!(RawImage::new(2, 2, 16, 1e-3, vec![0; 3]).is_err());
    }

    #[test]
    fn irradiance_rejects_negative_and_nan() {
        assert!(IrradianceMap::new(1, 1, vec![-1.0]).is_err());
        assert!(IrradianceMap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(IrradianceMap::new(1, 1, vec![0.0]).is_ok());
    }

    #[test]
    fn crop_extracts_rectangle() {
        let map = IrradianceMap::new(3, 2, vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let c = map.crop(1, 0, 2, 2);
        assert_eq!(c.values(), &[1., 2., 4., 5.]);
    }
}
