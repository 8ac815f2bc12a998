//! Float radiance file: ASCII header `HDRF <width> <height>\n` followed by
//! `width * height` little-endian IEEE-754 `f32`, row-major.

use crate::image::IrradianceMap;

use super::IoError;

pub fn encode(map: &IrradianceMap) -> Vec<u8> {
    let header = format!("HDRF {} {}\n", map.width(), map.height());
    let mut out = Vec::with_capacity(header.len() + 4 * map.values().len());
    out.extend_from_slice(header.as_bytes());
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<IrradianceMap, IoError> {
    let nl =
        bytes.iter().position(|&b| b == b'\n').ok_or_else(|| IoError::Format("HDRF header not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| IoError::Format("HDRF header is not ASCII".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some("HDRF") {
        return Err(IoError::Format("missing HDRF magic".into()));
    }
    let mut dim = || -> Result<usize, IoError> {
        parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| IoError::Format(format!("bad HDRF header {header:?}")))
    };
    let (width, height) = (dim()?, dim()?);
    let body = &bytes[nl + 1..];
    if body.len() != 4 * width * height {
        return Err(IoError::Format(format!("HDRF body has {} bytes, expected {}", body.len(), 4 * width * height)));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    IrradianceMap::new(width, height, values).map_err(|e| IoError::Format(e.to_string()))
}
