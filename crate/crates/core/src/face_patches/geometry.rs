//! Patch rectangles derived from landmarks or from a single eye.
//!
//! All offsets are multiples of the inter-eye distance `D`. A nominal patch
//! rectangle is intersected with the image and kept only when at least
//! `min_area_fraction` of it survives.

use super::landmarks::{EyeBox, NamedLandmarks};
use crate::error::{GeometryError, Result};
use crate::types::{ImageBuffer, PatchKind, Rect};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGeometry {
    /// Forehead spans from this far above the brow line...
    pub forehead_top: f64,
    /// ...down to this far above it.
    pub forehead_bottom: f64,
    /// Cheek inset from the face contour.
    pub cheek_face_inset: f64,
    /// Gap between cheek and the eye center, horizontally.
    pub cheek_eye_gap: f64,
    /// Cheek top, below the eye center.
    pub cheek_top: f64,
    /// Gap between the mouth corners and the chin patch.
    pub chin_mouth_gap: f64,
    pub min_area_fraction: f64,
    /// Inter-eye distance estimated as this multiple of a lone eye's width.
    pub eye_width_to_distance: f64,
    pub fallback_forehead_half_width: f64,
    pub fallback_forehead_top: f64,
    pub fallback_forehead_bottom: f64,
    pub fallback_cheek_outer: f64,
    pub fallback_cheek_inner: f64,
    pub fallback_cheek_top: f64,
    pub fallback_cheek_bottom: f64,
    /// Horizontal offset of the chin center toward the face midline.
    pub fallback_chin_offset: f64,
    pub fallback_chin_half_width: f64,
    pub fallback_chin_top: f64,
    /// Chin bottom edge, below the eye line.
    pub fallback_chin_bottom: f64,
}

impl Default for PatchGeometry {
    fn default() -> Self {
        Self {
            forehead_top: 0.9,
            forehead_bottom: 0.1,
            cheek_face_inset: 0.05,
            cheek_eye_gap: 0.1,
            cheek_top: 0.4,
            chin_mouth_gap: 0.15,
            min_area_fraction: 0.5,
            eye_width_to_distance: 2.2,
            fallback_forehead_half_width: 0.5,
            fallback_forehead_top: 1.2,
            fallback_forehead_bottom: 0.4,
            fallback_cheek_outer: 0.5,
            fallback_cheek_inner: 0.1,
            fallback_cheek_top: 0.4,
            fallback_cheek_bottom: 1.2,
            fallback_chin_offset: 0.5,
            fallback_chin_half_width: 0.4,
            fallback_chin_top: 2.0,
            fallback_chin_bottom: 2.8,
        }
    }
}

/// A patch rectangle in real-valued image coordinates, before clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl NominalRect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    /// Clips to `[0,width] x [0,height]` and rounds to whole pixels. `None` if
    /// less than `min_fraction` of the nominal area is inside the image.
    pub fn clip(&self, width: u32, height: u32, min_fraction: f64) -> Option<Rect> {
        let nominal = self.area();
        if !(nominal > 0.0) {
            return None;
        }
        let (w, h) = (f64::from(width), f64::from(height));
        let x0 = self.x0.clamp(0.0, w);
        let x1 = self.x1.clamp(0.0, w);
        let y0 = self.y0.clamp(0.0, h);
        let y1 = self.y1.clamp(0.0, h);
        let kept = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
        if kept < min_fraction * nominal {
            return None;
        }
        let (px0, px1) = (x0.round() as u32, x1.round() as u32);
        let (py0, py1) = (y0.round() as u32, y1.round() as u32);
        (px1 > px0 && py1 > py0).then(|| Rect::new(px0, py0, px1 - px0, py1 - py0))
    }
}

impl PatchGeometry {
    pub fn landmark_rects(&self, lm: &NamedLandmarks) -> Vec<(PatchKind, NominalRect)> {
        let d = lm.inter_eye_distance();
        let brow_y = lm.left_brow_top.y.min(lm.right_brow_top.y);
        let mouth_y = lm.mouth_left.y.max(lm.mouth_right.y);
        vec![
            (
                PatchKind::Forehead,
                NominalRect {
                    x0: lm.left_brow_top.x,
                    x1: lm.right_brow_top.x,
                    y0: brow_y - self.forehead_top * d,
                    y1: brow_y - self.forehead_bottom * d,
                },
            ),
            (
                PatchKind::LeftCheek,
                NominalRect {
                    x0: lm.face_left.x + self.cheek_face_inset * d,
                    x1: lm.left_eye_center.x - self.cheek_eye_gap * d,
                    y0: lm.left_eye_center.y + self.cheek_top * d,
                    y1: lm.mouth_left.y,
                },
            ),
            (
                PatchKind::RightCheek,
                NominalRect {
                    x0: lm.right_eye_center.x + self.cheek_eye_gap * d,
                    x1: lm.face_right.x - self.cheek_face_inset * d,
                    y0: lm.right_eye_center.y + self.cheek_top * d,
                    y1: lm.mouth_right.y,
                },
            ),
            (
                PatchKind::Chin,
                NominalRect {
                    x0: lm.mouth_left.x,
                    x1: lm.mouth_right.x,
                    y0: mouth_y + self.chin_mouth_gap * d,
                    y1: lm.chin_bottom.y,
                },
            ),
        ]
    }

    /// Rectangles inferred from one eye. The eye counts as the viewer-left eye
    /// when its center lies in the left half of the image; only skin on that
    /// side gets a cheek patch.
    pub fn eye_rects(&self, eye: &EyeBox, image_width: u32) -> Result<Vec<(PatchKind, NominalRect)>> {
        let r = eye.rect;
        if r.w == 0 || r.h == 0 {
            return Err(GeometryError::DegenerateEyeBox.into());
        }
        let d = self.eye_width_to_distance * f64::from(r.w);
        let cx = f64::from(r.x) + f64::from(r.w) / 2.0;
        let cy = f64::from(r.y) + f64::from(r.h) / 2.0;
        let viewer_left = cx < f64::from(image_width) / 2.0;
        // +1 points from this eye toward the face midline.
        let inward = if viewer_left { 1.0 } else { -1.0 };

        let cheek_a = cx - inward * self.fallback_cheek_outer * d;
        let cheek_b = cx + inward * self.fallback_cheek_inner * d;
        let chin_cx = cx + inward * self.fallback_chin_offset * d;
        Ok(vec![
            (
                PatchKind::Forehead,
                NominalRect {
                    x0: cx - self.fallback_forehead_half_width * d,
                    x1: cx + self.fallback_forehead_half_width * d,
                    y0: cy - self.fallback_forehead_top * d,
                    y1: cy - self.fallback_forehead_bottom * d,
                },
            ),
            (
                if viewer_left { PatchKind::LeftCheek } else { PatchKind::RightCheek },
                NominalRect {
                    x0: cheek_a.min(cheek_b),
                    x1: cheek_a.max(cheek_b),
                    y0: cy + self.fallback_cheek_top * d,
                    y1: cy + self.fallback_cheek_bottom * d,
                },
            ),
            (
                PatchKind::Chin,
                NominalRect {
                    x0: chin_cx - self.fallback_chin_half_width * d,
                    x1: chin_cx + self.fallback_chin_half_width * d,
                    y0: cy + self.fallback_chin_top * d,
                    y1: cy + self.fallback_chin_bottom * d,
                },
            ),
        ])
    }

    pub(crate) fn clip_all(
        &self,
        nominal: Vec<(PatchKind, NominalRect)>,
        img: &ImageBuffer,
    ) -> Vec<(PatchKind, Rect)> {
        nominal
            .into_iter()
            .filter_map(|(kind, r)| {
                r.clip(img.width(), img.height(), self.min_area_fraction)
                    .map(|rect| (kind, rect))
            })
            .collect()
    }
}
