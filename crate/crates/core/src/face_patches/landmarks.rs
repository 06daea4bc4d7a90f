use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::types::{ImageBuffer, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// The ten facial points the patch geometry is defined on. "Left" and
/// "right" are the viewer's left and right in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NamedLandmarks {
    pub left_eye_center: Point,
    pub right_eye_center: Point,
    pub nose_tip: Point,
    pub mouth_left: Point,
    pub mouth_right: Point,
    pub chin_bottom: Point,
    pub left_brow_top: Point,
    pub right_brow_top: Point,
    pub face_left: Point,
    pub face_right: Point,
}

pub const LANDMARK_NAMES: [&str; 10] = [
    "left_eye_center",
    "right_eye_center",
    "nose_tip",
    "mouth_left",
    "mouth_right",
    "chin_bottom",
    "left_brow_top",
    "right_brow_top",
    "face_left",
    "face_right",
];

impl NamedLandmarks {
    pub fn points(&self) -> [(&'static str, Point); 10] {
        [
            (LANDMARK_NAMES[0], self.left_eye_center),
            (LANDMARK_NAMES[1], self.right_eye_center),
            (LANDMARK_NAMES[2], self.nose_tip),
            (LANDMARK_NAMES[3], self.mouth_left),
            (LANDMARK_NAMES[4], self.mouth_right),
            (LANDMARK_NAMES[5], self.chin_bottom),
            (LANDMARK_NAMES[6], self.left_brow_top),
            (LANDMARK_NAMES[7], self.right_brow_top),
            (LANDMARK_NAMES[8], self.face_left),
            (LANDMARK_NAMES[9], self.face_right),
        ]
    }

    fn from_points(get: impl Fn(&str) -> Point) -> Self {
        Self {
            left_eye_center: get(LANDMARK_NAMES[0]),
            right_eye_center: get(LANDMARK_NAMES[1]),
            nose_tip: get(LANDMARK_NAMES[2]),
            mouth_left: get(LANDMARK_NAMES[3]),
            mouth_right: get(LANDMARK_NAMES[4]),
            chin_bottom: get(LANDMARK_NAMES[5]),
            left_brow_top: get(LANDMARK_NAMES[6]),
            right_brow_top: get(LANDMARK_NAMES[7]),
            face_left: get(LANDMARK_NAMES[8]),
            face_right: get(LANDMARK_NAMES[9]),
        }
    }

    /// Distance between the eye centers.
    pub fn inter_eye_distance(&self) -> f64 {
        self.left_eye_center.distance(self.right_eye_center)
    }

    pub fn eye_midpoint(&self) -> Point {
        Point::new(
            (self.left_eye_center.x + self.right_eye_center.x) / 2.0,
            (self.left_eye_center.y + self.right_eye_center.y) / 2.0,
        )
    }

    /// Checks eye ordering, non-zero eye distance and that every point lies in
    /// `[0, width) x [0, height)`.
    pub fn validate(&self, width: u32, height: u32) -> Result<(), BackendError> {
        for (name, p) in self.points() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(BackendError::InvalidLandmarks(format!("{name} is not finite")));
            }
            if p.x < 0.0 || p.y < 0.0 || p.x >= f64::from(width) || p.y >= f64::from(height) {
                return Err(BackendError::InvalidLandmarks(format!(
                    "{name} ({}, {}) outside {width}x{height} image",
                    p.x, p.y
                )));
            }
        }
        if self.left_eye_center.x >= self.right_eye_center.x {
            return Err(BackendError::InvalidLandmarks(format!(
                "left eye x {} must be left of right eye x {}",
                self.left_eye_center.x, self.right_eye_center.x
            )));
        }
        if self.inter_eye_distance() <= 0.0 {
            return Err(BackendError::InvalidLandmarks("zero inter-eye distance".into()));
        }
        Ok(())
    }

    /// Parses `point_name x y` lines. All ten points are required exactly once.
    pub fn parse_sidecar(text: &str, origin: &Path) -> Result<Self, BackendError> {
        let mut found: [Option<Point>; 10] = [None; 10];
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |cause: String| BackendError::Annotation {
                path: origin.to_path_buf(),
                line: i + 1,
                cause,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, x, y] = fields[..] else {
                return Err(err(format!("expected `name x y`, got {line:?}")));
            };
            let slot = LANDMARK_NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| err(format!("unknown point {name:?}")))?;
            let parse = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad coordinate {s:?}")));
            if found[slot].replace(Point::new(parse(x)?, parse(y)?)).is_some() {
                return Err(err(format!("point {name:?} given twice")));
            }
        }
        if let Some(missing) = found.iter().position(Option::is_none) {
            return Err(BackendError::Annotation {
                path: origin.to_path_buf(),
                line: 0,
                cause: format!("missing point {:?}", LANDMARK_NAMES[missing]),
            });
        }
        Ok(Self::from_points(|name| {
            let i = LANDMARK_NAMES.iter().position(|n| *n == name).unwrap();
            found[i].unwrap()
        }))
    }

    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for (name, p) in self.points() {
            let _ = writeln!(out, "{name} {} {}", p.x, p.y);
        }
        out
    }
}

/// A single detected eye.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EyeBox {
    pub rect: Rect,
}

/// One eye detection with the backend's confidence in it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeCandidate {
    pub rect: Rect,
    pub confidence: f64,
}

/// Parses `eye x y w h [confidence]` lines; confidence defaults to 1.
pub fn parse_eye_sidecar(text: &str, origin: &Path) -> Result<Vec<EyeCandidate>, BackendError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |cause: String| BackendError::Annotation {
            path: origin.to_path_buf(),
            line: i + 1,
            cause,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.first() != Some(&"eye") || !(5..=6).contains(&fields.len()) {
            return Err(err(format!("expected `eye x y w h [confidence]`, got {line:?}")));
        }
        let int = |s: &str| s.parse::<u32>().map_err(|_| err(format!("bad integer {s:?}")));
        let confidence = match fields.get(5) {
            Some(c) => c
                .parse::<f64>()
                .map_err(|_| err(format!("bad confidence {c:?}")))?,
            None => 1.0,
        };
        out.push(EyeCandidate {
            rect: Rect::new(int(fields[1])?, int(fields[2])?, int(fields[3])?, int(fields[4])?),
            confidence,
        });
    }
    Ok(out)
}

pub(crate) fn validate_eye(rect: &Rect, img: &ImageBuffer) -> Result<(), BackendError> {
    if rect.w > 0 && rect.h > 0 && !img.contains(rect) {
        return Err(BackendError::InvalidEye(format!(
            "{rect:?} outside {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}
