//! Domain values shared by every stage of the pipeline.
//!
//! Coordinates use a top-left origin with `y` growing downward everywhere.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lowest and highest severity on the grading scale.
pub const MIN_SEVERITY: f64 = 1.0;
pub const MAX_SEVERITY: f64 = 5.0;

/// Decoded 8-bit RGB raster, row-major, channels in R,G,B order.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} RGB image needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// A uniformly colored image. Panics on zero dimensions.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel. Panics on zero
    /// dimensions.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn bounds(&self) -> Rect {
        Rect {
            x: 0,
            y: 0,
            w: self.width,
            h: self.height,
        }
    }

    pub fn contains(&self, rect: &Rect) -> bool {
        rect.w >= 1
            && rect.h >= 1
            && u64::from(rect.x) + u64::from(rect.w) <= u64::from(self.width)
            && u64::from(rect.y) + u64::from(rect.h) <= u64::from(self.height)
    }

    pub fn crop(&self, rect: &Rect) -> Result<ImageBuffer> {
        if !self.contains(rect) {
            return Err(Error::InvalidImage(format!(
                "crop {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let row_bytes = rect.w as usize * 3;
        let mut pixels = Vec::with_capacity(row_bytes * rect.h as usize);
        for y in rect.y..rect.y + rect.h {
            let start = (y as usize * self.width as usize + rect.x as usize) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + row_bytes]);
        }
        Ok(ImageBuffer {
            width: rect.w,
            height: rect.h,
            pixels,
        })
    }

    /// Mean of `0.299 R + 0.587 G + 0.114 B` over all pixels, on the 0..=255 scale.
    pub fn mean_luma(&self) -> f64 {
        let sum: f64 = self
            .pixels
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .sum();
        sum / (self.width as f64 * self.height as f64)
    }

    /// SHA-256 over dimensions and pixel bytes. Two images share a digest iff
    /// they decode to the same raster.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(&self.pixels);
        hasher.finalize().into()
    }
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }
}

/// Ordinal grade 1 (Clear) through 5 (Severe). Grade 0 ("not acne") is not a
/// severity and cannot be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct SeverityLabel(u8);

impl SeverityLabel {
    pub const ALL: [SeverityLabel; 5] = [
        SeverityLabel(1),
        SeverityLabel(2),
        SeverityLabel(3),
        SeverityLabel(4),
        SeverityLabel(5),
    ];
    pub const MILD: SeverityLabel = SeverityLabel(3);

    pub fn new(value: i64) -> Result<Self> {
        match value {
            1..=5 => Ok(Self(value as u8)),
            other => Err(Error::InvalidLabel(other)),
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }

    /// Zero-based position, handy for indexing 5-element tables.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "Clear",
            2 => "Almost Clear",
            3 => "Mild",
            4 => "Moderate",
            _ => "Severe",
        }
    }
}

impl TryFrom<i64> for SeverityLabel {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SeverityLabel> for u8 {
    fn from(l: SeverityLabel) -> u8 {
        l.0
    }
}

impl fmt::Display for SeverityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A real-valued severity on `[1.0, 5.0]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SeverityScore(f64);

impl SeverityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SeverityScore {
    type Error = Error;

    fn try_from(raw: f64) -> Result<Self> {
        clamp_score(raw)
    }
}

impl From<SeverityScore> for f64 {
    fn from(s: SeverityScore) -> f64 {
        s.0
    }
}

impl fmt::Display for SeverityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Clamps a raw model output onto the severity scale.
pub fn clamp_score(raw: f64) -> Result<SeverityScore> {
    if !raw.is_finite() {
        return Err(Error::InvalidScore(raw));
    }
    Ok(SeverityScore(raw.clamp(MIN_SEVERITY, MAX_SEVERITY)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    Forehead,
    LeftCheek,
    RightCheek,
    Chin,
}

impl PatchKind {
    pub const ALL: [PatchKind; 4] = [
        PatchKind::Forehead,
        PatchKind::LeftCheek,
        PatchKind::RightCheek,
        PatchKind::Chin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Forehead => "forehead",
            Self::LeftCheek => "left_cheek",
            Self::RightCheek => "right_cheek",
            Self::Chin => "chin",
        }
    }
}

impl fmt::Display for PatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidImage(format!("unknown patch kind {s:?}")))
    }
}
