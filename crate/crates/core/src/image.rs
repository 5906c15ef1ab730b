//! RGB frames and the binary PPM (P6) / PGM (P5) formats.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

/// 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(CoreError::data(format!(
                "image {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Image { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean in [0, 255].
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sum = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height) as f64;
        sum.map(|s| s / n)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let (magic, width, height, maxval, body) = parse_header(bytes)?;
        if magic != "P6" {
            return Err(CoreError::data(format!("expected P6 image, found {magic}")));
        }
        if maxval != 255 {
            return Err(CoreError::data(format!("unsupported PPM maxval {maxval}")));
        }
        let need = width * height * 3;
        if body.len() < need {
            return Err(CoreError::data(format!("PPM truncated: {} of {need} bytes", body.len())));
        }
        Image::new(width, height, body[..need].to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Image::from_ppm(&bytes).map_err(|e| match e {
            CoreError::Data(msg) => CoreError::data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn parse_header(bytes: &[u8]) -> Result<(String, usize, usize, usize, &[u8])> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CoreError::data("truncated image header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| CoreError::data(format!("bad image header field {s:?}")));
    let (w, h, m) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    Ok((fields[0].clone(), w, h, m, bytes.get(pos..).unwrap_or(&[])))
}

/// Encodes a single-channel map as P5 after min-max normalization to 0..255.
/// A constant map encodes as all zeros.
pub fn encode_pgm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height || values.is_empty() {
        return Err(CoreError::data(format!("PGM {width}x{height} needs {} values, got {}", width * height, values.len())));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (magic, width, height, maxval, body) = parse_header(bytes)?;
    if magic != "P5" || maxval != 255 {
        return Err(CoreError::data(format!("expected 8-bit P5 image, found {magic} maxval {maxval}")));
    }
    if body.len() < width * height {
        return Err(CoreError::data("PGM truncated"));
    }
    Ok((width, height, body[..width * height].to_vec()))
}
