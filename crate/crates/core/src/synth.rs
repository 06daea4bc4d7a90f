//! Seeded synthetic images for tests, benchmarks and controlled experiments.
//!
//! Faces are drawn as ellipses with dark eyes, brows and a mouth so that the
//! returned landmarks (or eye box) describe the drawing. Lesion patches are
//! skin-toned squares with reddish disks whose count fixes the severity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::face_patches::{EyeBox, NamedLandmarks, Point};
use crate::types::{ImageBuffer, Rect, SeverityLabel};

const BACKGROUND: [u8; 3] = [62, 84, 112];
const SKIN: [u8; 3] = [222, 176, 150];
const FEATURE: [u8; 3] = [48, 36, 32];
const LIPS: [u8; 3] = [170, 70, 72];
const LESION: [u8; 3] = [158, 48, 44];

fn jitter(rng: &mut ChaCha8Rng, c: [u8; 3], amp: i16) -> [u8; 3] {
    let n: i16 = rng.random_range(-amp..=amp);
    c.map(|v| (i16::from(v) + n).clamp(0, 255) as u8)
}

fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    let (dx, dy) = ((x - cx) / a, (y - cy) / b);
    dx * dx + dy * dy <= 1.0
}

struct FaceLayout {
    fx: f64,
    fy: f64,
    a: f64,
    b: f64,
    eye_y: f64,
    d: f64,
}

impl FaceLayout {
    fn new(width: u32, height: u32, fx_frac: f64) -> Self {
        let a = 0.3 * f64::from(width.min(height));
        let b = 1.3 * a;
        let fy = f64::from(height) / 2.0;
        Self {
            fx: f64::from(width) * fx_frac,
            fy,
            a,
            b,
            eye_y: fy - 0.1 * b,
            d: 0.8 * a,
        }
    }

    fn draw(&self, width: u32, height: u32, eyes: &[f64], seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (eye_a, eye_b) = (0.18 * self.d, 0.09 * self.d);
        let brow_y = self.eye_y - 0.3 * self.d;
        let mouth_y = self.eye_y + 1.1 * self.d;
        ImageBuffer::from_fn(width, height, |x, y| {
            let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            let base = if !in_ellipse(px, py, self.fx, self.fy, self.a, self.b) {
                BACKGROUND
            } else if eyes
                .iter()
                .any(|ex| in_ellipse(px, py, *ex, self.eye_y, eye_a, eye_b))
            {
                FEATURE
            } else if eyes.iter().any(|ex| {
                (px - ex).abs() <= 0.25 * self.d && (py - brow_y).abs() <= 0.03 * self.d + 1.0
            }) {
                FEATURE
            } else if in_ellipse(px, py, self.fx, mouth_y, 0.35 * self.d, 0.08 * self.d) {
                LIPS
            } else {
                SKIN
            };
            jitter(&mut rng, base, 6)
        })
    }
}

/// A frontal face filling most of the frame, with its ten landmarks.
pub fn frontal_face(width: u32, height: u32, seed: u64) -> (ImageBuffer, NamedLandmarks) {
    let l = FaceLayout::new(width, height, 0.5);
    let half_eye = l.d / 2.0;
    let (lx, rx) = (l.fx - half_eye, l.fx + half_eye);
    let brow_y = l.eye_y - 0.3 * l.d;
    let mouth_y = l.eye_y + 1.1 * l.d;
    let lm = NamedLandmarks {
        left_eye_center: Point::new(lx, l.eye_y),
        right_eye_center: Point::new(rx, l.eye_y),
        nose_tip: Point::new(l.fx, l.eye_y + 0.6 * l.d),
        mouth_left: Point::new(l.fx - 0.35 * l.d, mouth_y),
        mouth_right: Point::new(l.fx + 0.35 * l.d, mouth_y),
        chin_bottom: Point::new(l.fx, l.fy + 0.95 * l.b),
        left_brow_top: Point::new(lx - 0.25 * l.d, brow_y),
        right_brow_top: Point::new(rx + 0.25 * l.d, brow_y),
        face_left: Point::new(l.fx - l.a, l.eye_y + 0.5 * l.d),
        face_right: Point::new(l.fx + l.a, l.eye_y + 0.5 * l.d),
    };
    (l.draw(width, height, &[lx, rx], seed), lm)
}

/// A face turned so only the viewer-left eye is visible, with that eye's box.
pub fn profile_face(width: u32, height: u32, seed: u64) -> (ImageBuffer, EyeBox) {
    let l = FaceLayout::new(width, height, 0.42);
    let ex = l.fx - 0.2 * l.a;
    let ew = (l.d / 2.2).round();
    let eh = (0.2 * l.d).round();
    let rect = Rect::new(
        (ex - ew / 2.0).round() as u32,
        (l.eye_y - eh / 2.0).round() as u32,
        ew as u32,
        eh as u32,
    );
    (l.draw(width, height, &[ex], seed), EyeBox { rect })
}

/// Where lesion centres may fall inside a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LesionRegion {
    Anywhere,
    LeftHalf,
}

/// Severity as a deterministic function of lesion count: two counts per grade,
/// `0-1 -> 1`, `2-3 -> 2`, ... `8-9 -> 5`.
pub fn severity_for_count(count: usize) -> SeverityLabel {
    SeverityLabel::new((1 + count / 2).min(5) as i64).expect("1..=5")
}

pub fn lesion_count_for(label: SeverityLabel, rng: &mut impl Rng) -> usize {
    2 * label.index() + rng.random_range(0..2usize)
}

/// A square skin patch with `count` lesion disks.
pub fn lesion_patch(side: u32, count: usize, region: LesionRegion, rng: &mut impl Rng) -> ImageBuffer {
    let radius = (f64::from(side) / 18.0).max(1.5);
    let r = radius.ceil() as u32;
    let x_max = match region {
        LesionRegion::Anywhere => side - r,
        LesionRegion::LeftHalf => side / 2 - r,
    };
    let centers: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            (
                f64::from(rng.random_range(r..x_max)) + 0.5,
                f64::from(rng.random_range(r..side - r)) + 0.5,
            )
        })
        .collect();
    let noise: Vec<i16> = (0..side * side).map(|_| rng.random_range(-8..=8)).collect();
    ImageBuffer::from_fn(side, side, |x, y| {
        let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let base = if centers
            .iter()
            .any(|(cx, cy)| (px - cx).hypot(py - cy) <= radius)
        {
            LESION
        } else {
            SKIN
        };
        let n = noise[(y * side + x) as usize];
        base.map(|v| (i16::from(v) + n).clamp(0, 255) as u8)
    })
}

/// One labeled lesion patch per entry of `labels`, seeded.
pub fn lesion_dataset(
    labels: &[SeverityLabel],
    side: u32,
    region: LesionRegion,
    seed: u64,
) -> Vec<(ImageBuffer, SeverityLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels
        .iter()
        .map(|&label| {
            let count = lesion_count_for(label, &mut rng);
            debug_assert_eq!(severity_for_count(count), label);
            (lesion_patch(side, count, region, &mut rng), label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frontal_landmarks_are_valid_and_inside() {
        for (w, h) in [(256, 256), (320, 240), (200, 300)] {
            let (img, lm) = frontal_face(w, h, 1);
            assert_eq!((img.width(), img.height()), (w, h));
            lm.validate(w, h).unwrap();
        }
    }

    #[test]
    fn faces_are_seed_deterministic() {
        assert_eq!(frontal_face(128, 128, 5).0, frontal_face(128, 128, 5).0);
        assert_ne!(frontal_face(128, 128, 5).0, frontal_face(128, 128, 6).0);
    }

    #[test]
    fn profile_eye_is_left_half_and_dark() {
        let (img, eye) = profile_face(256, 256, 2);
        assert!(img.contains(&eye.rect));
        assert!(eye.rect.x + eye.rect.w / 2 < 128);
        let c = img.pixel(eye.rect.x + eye.rect.w / 2, eye.rect.y + eye.rect.h / 2);
        assert!(c[0] < 80);
    }

    #[test]
    fn count_to_severity_table() {
        let got: Vec<u8> = (0..10).map(|c| severity_for_count(c).value()).collect();
        assert_eq!(got, vec![1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for l in SeverityLabel::ALL {
            for _ in 0..10 {
                assert_eq!(severity_for_count(lesion_count_for(l, &mut rng)), l);
            }
        }
    }

    #[test]
    fn left_half_lesions_stay_left() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = lesion_patch(64, 9, LesionRegion::LeftHalf, &mut rng);
        for y in 0..64 {
            for x in 32..64 {
                assert!(p.pixel(x, y)[1] > 120, "lesion pixel at ({x},{y})");
            }
        }
    }
}
