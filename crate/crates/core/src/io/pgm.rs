//! Binary PGM (`P5`) encode/decode.
//!
//! Raw frames are stored with `maxval = 2^A - 1` (65535 for the 16-bit
//! sensor), two bytes per sample, most significant byte first. The exposure
//! time travels in a header comment, `# exposure_time=<seconds>`, which any
//! conforming reader skips.

use crate::image::RawImage;

use super::IoError;

const EXPOSURE_TAG: &str = "exposure_time=";

pub fn encode_raw(img: &RawImage) -> Vec<u8> {
    let maxval = img.max_value();
    let header = format!("P5\n# {EXPOSURE_TAG}{}\n{} {}\n{}\n", img.exposure_time(), img.width(), img.height(), maxval);
    let wide = maxval > 255;
    let mut out = Vec::with_capacity(header.len() + img.samples().len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    if wide {
        for &s in img.samples() {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(img.samples().iter().map(|&s| s as u8));
    }
    out
}

/// 8-bit grayscale, used for masks and log previews.
pub fn encode_gray8(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Decoded `P5` payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
    pub exposure_time: Option<f64>,
}

pub fn decode(bytes: &[u8]) -> Result<Pgm, IoError> {
    let mut cur = Cursor { bytes, pos: 0, exposure: None };
    if cur.bytes.get(..2) != Some(b"P5") {
        return Err(IoError::Format("not a binary PGM (missing P5 magic)".into()));
    }
    cur.pos = 2;
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(IoError::Format(format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(IoError::Format("truncated header".into()));
    }
    cur.pos += 1;
    let n = width * height;
    let data = &cur.bytes[cur.pos..];
    let samples: Vec<u16> = if maxval > 255 {
        if data.len() < 2 * n {
            return Err(IoError::Format(format!("raster too short: {} < {}", data.len(), 2 * n)));
        }
        data[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        if data.len() < n {
            return Err(IoError::Format(format!("raster too short: {} < {n}", data.len())));
        }
        data[..n].iter().map(|&b| b as u16).collect()
    };
    if let Some(s) = samples.iter().find(|&&s| s as usize > maxval) {
        return Err(IoError::Format(format!("sample {s} exceeds maxval {maxval}")));
    }
    Ok(Pgm { width, height, maxval: maxval as u16, samples, exposure_time: cur.exposure })
}

/// Decodes a raw frame. `maxval` must be `2^A - 1`.
pub fn decode_raw(bytes: &[u8]) -> Result<RawImage, IoError> {
    let pgm = decode(bytes)?;
    let bits = 16 - pgm.maxval.leading_zeros();
    if (1u32 << bits) - 1 != pgm.maxval as u32 {
        return Err(IoError::Format(format!("maxval {} is not 2^A-1", pgm.maxval)));
    }
    let exposure = pgm.exposure_time.ok_or_else(|| IoError::Format("missing exposure_time header comment".into()))?;
    RawImage::new(pgm.width, pgm.height, bits, exposure, pgm.samples).map_err(|e| IoError::Format(e.to_string()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    exposure: Option<f64>,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                let start = self.pos + 1;
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
                let comment = String::from_utf8_lossy(&self.bytes[start..self.pos]);
                if let Some(v) = comment.trim().strip_prefix(EXPOSURE_TAG) {
                    self.exposure = v.trim().parse().ok();
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, IoError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoError::Format(format!("bad header number at byte {start}")))
    }
}
