//! 8-bit grayscale images with bit-exact binary PGM (P5) I/O, and the
//! normalized unit-interval view used by the statistical pipeline.
//!
//! The canonical on-disk form is exactly `P5\n<width> <height>\n255\n`
//! followed by `width * height` raw bytes, top row first. `#` comments are
//! accepted when reading, never written.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImageError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0}, only 255 is supported")]
    UnsupportedMaxval(u64),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{extra} unexpected bytes after the pixel payload")]
    TrailingData { extra: usize },
    #[error("dimensions {width}x{height} require {expected} samples, got {actual}")]
    DimensionMismatch {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("image dimensions must be positive")]
    ZeroDimension,
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    IntensityOutOfRange { index: usize, value: f64 },
}

/// A grayscale image: row-major 8-bit intensity samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    levels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, levels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        let expected = width as usize * height as usize;
        if levels.len() != expected {
            return Err(ImageError::DimensionMismatch {
                width,
                height,
                expected,
                actual: levels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            levels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel, row-major.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        assert!(width > 0 && height > 0, "dimensions must be positive");
        let mut levels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                levels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            levels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn pixel_count(&self) -> usize {
        self.levels.len()
    }
}

/// The normalized real-valued view of an image: every sample mapped into
/// [0, 1], 0 black and 1 white.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityField {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl IntensityField {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(ImageError::DimensionMismatch {
                width,
                height,
                expected,
                actual: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ImageError::IntensityOutOfRange { index, value });
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest and largest sample value. The field is never empty.
    pub fn min_max(&self) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in &self.values {
            if v < min {
                min = v;
            }
            if v > max {
                max = v;
            }
        }
        (min, max)
    }
}

/// Decodes a binary PGM (magic `P5`, maxval 255).
///
/// Header tokens may be separated by any whitespace and `#` comments; the
/// payload starts after the single whitespace byte that terminates maxval.
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(ImageError::MalformedHeader("missing P5 magic".to_string()));
    }
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroDimension);
    }
    if width > u32::MAX as u64 || height > u32::MAX as u64 {
        return Err(ImageError::MalformedHeader(
            "dimensions exceed supported range".to_string(),
        ));
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(ImageError::MalformedHeader(
                "expected single whitespace before payload".to_string(),
            ))
        }
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| ImageError::MalformedHeader("dimension overflow".to_string()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImageError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(ImageError::TrailingData {
            extra: payload.len() - expected,
        });
    }
    GrayImage::new(width as u32, height as u32, payload.to_vec())
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<u64, ImageError> {
    // Skip whitespace and # comments (comment runs to end of line).
    loop {
        match bytes.get(*pos) {
            None => {
                return Err(ImageError::MalformedHeader(
                    "unexpected end of header".to_string(),
                ))
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(_) => break,
        }
    }
    let start = *pos;
    let mut value: u64 = 0;
    while let Some(&b) = bytes.get(*pos) {
        if !b.is_ascii_digit() {
            break;
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as u64))
            .ok_or_else(|| ImageError::MalformedHeader("header value overflow".to_string()))?;
        *pos += 1;
    }
    if *pos == start {
        return Err(ImageError::MalformedHeader(format!(
            "expected integer at byte {start}"
        )));
    }
    Ok(value)
}

/// Encodes an image in the canonical binary PGM form. `load_pgm(save_pgm(img))`
/// is the identity.
pub fn save_pgm(image: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixel_count());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(image.levels());
    out
}

/// Maps each 8-bit level to `level / 255` in [0, 1].
pub fn normalize(image: &GrayImage) -> IntensityField {
    IntensityField {
        width: image.width(),
        height: image.height(),
        values: image.levels().iter().map(|&l| l as f64 / 255.0).collect(),
    }
}

/// Inverse of [`normalize`]: `round(value * 255)` with halves away from zero,
/// clamped to [0, 255]. Round-trips all 256 levels exactly.
pub fn quantize(field: &IntensityField) -> GrayImage {
    let levels = field
        .values()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage {
        width: field.width(),
        height: field.height(),
        levels,
    }
}
