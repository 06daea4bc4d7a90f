//! Skin-patch extraction.
//!
//! Extraction is coupled: a landmark detector runs first and, when it finds a
//! face, forehead/cheek/chin rectangles are placed relative to the landmarks.
//! When it finds nothing, a single-eye detector is tried and the patches are
//! inferred from that eye alone, which covers profile shots.

mod backends;
mod geometry;
pub mod haar;
mod landmarks;

use serde::{Deserialize, Serialize};

pub use backends::{
    CommandBackend, EyeBackend, LandmarkBackend, NullBackend, SidecarBackend, EYE_EXT,
    LANDMARK_EXT,
};
pub use geometry::{NominalRect, PatchGeometry};
pub use haar::{DetectParams, HaarCascade, HaarEyeBackend};
pub use landmarks::{
    parse_eye_sidecar, EyeBox, EyeCandidate, NamedLandmarks, Point, LANDMARK_NAMES,
};

use crate::error::{Error, GeometryError, Result};
use crate::image_io;
use crate::types::{ImageBuffer, PatchKind, Rect, SeverityLabel};

/// A rectangular skin crop.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinPatch {
    pub kind: PatchKind,
    pub source_rect: Rect,
    pub pixels: ImageBuffer,
    /// Whole-image label, shared by every patch of the image.
    pub label: Option<SeverityLabel>,
    /// Circular shift applied by augmentation, in pixels along the kind's
    /// roll axis. Zero for unrolled patches.
    pub shift: u32,
}

impl SkinPatch {
    pub fn new(kind: PatchKind, source_rect: Rect, pixels: ImageBuffer) -> Self {
        Self {
            kind,
            source_rect,
            pixels,
            label: None,
            shift: 0,
        }
    }

    pub fn with_label(mut self, label: SeverityLabel) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionPath {
    Landmarks,
    EyeFallback,
}

/// Patches from one image together with the detector path that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub path: ExtractionPath,
    pub patches: Vec<SkinPatch>,
}

impl Extraction {
    pub fn rects(&self) -> Vec<Rect> {
        self.patches.iter().map(|p| p.source_rect).collect()
    }

    /// Assigns the whole-image label to every patch.
    pub fn labeled(mut self, label: SeverityLabel) -> Self {
        for p in &mut self.patches {
            p.label = Some(label);
        }
        self
    }
}

/// Runs the landmark backend and enforces the landmark invariants on its
/// answer.
pub fn detect_landmarks(
    backend: &dyn LandmarkBackend,
    img: &ImageBuffer,
) -> Result<Option<NamedLandmarks>> {
    match backend.detect(img)? {
        Some(lm) => {
            lm.validate(img.width(), img.height())?;
            Ok(Some(lm))
        }
        None => Ok(None),
    }
}

/// Highest-confidence eye from the backend. Ties go to the earlier candidate.
pub fn detect_single_eye(backend: &dyn EyeBackend, img: &ImageBuffer) -> Result<Option<EyeBox>> {
    let candidates = backend.detect_eyes(img)?;
    let best = candidates
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.confidence.total_cmp(&b.confidence).then(j.cmp(i)));
    match best {
        Some((_, c)) => {
            landmarks::validate_eye(&c.rect, img)?;
            Ok(Some(EyeBox { rect: c.rect }))
        }
        None => Ok(None),
    }
}

fn crop_patches(
    img: &ImageBuffer,
    rects: Vec<(PatchKind, Rect)>,
    min: usize,
) -> Result<Vec<SkinPatch>> {
    if rects.len() < min {
        return Err(GeometryError::InsufficientSkinArea { viable: rects.len() }.into());
    }
    rects
        .into_iter()
        .map(|(kind, rect)| Ok(SkinPatch::new(kind, rect, img.crop(&rect)?)))
        .collect()
}

pub fn patches_from_landmarks(
    lm: &NamedLandmarks,
    img: &ImageBuffer,
    geometry: &PatchGeometry,
) -> Result<Vec<SkinPatch>> {
    lm.validate(img.width(), img.height())?;
    let rects = geometry.clip_all(geometry.landmark_rects(lm), img);
    crop_patches(img, rects, 2)
}

pub fn patches_from_eye(
    eye: &EyeBox,
    img: &ImageBuffer,
    geometry: &PatchGeometry,
) -> Result<Vec<SkinPatch>> {
    let nominal = geometry.eye_rects(eye, img.width())?;
    let rects = geometry.clip_all(nominal, img);
    crop_patches(img, rects, 2)
}

/// Landmark path when a face is found, single-eye path otherwise.
pub fn extract_patches(
    landmark_backend: &dyn LandmarkBackend,
    eye_backend: &dyn EyeBackend,
    img: &ImageBuffer,
    geometry: &PatchGeometry,
) -> Result<Extraction> {
    if let Some(lm) = detect_landmarks(landmark_backend, img)? {
        return Ok(Extraction {
            path: ExtractionPath::Landmarks,
            patches: patches_from_landmarks(&lm, img, geometry)?,
        });
    }
    if let Some(eye) = detect_single_eye(eye_backend, img)? {
        return Ok(Extraction {
            path: ExtractionPath::EyeFallback,
            patches: patches_from_eye(&eye, img, geometry)?,
        });
    }
    Err(Error::NoFaceFound)
}

/// The source image with every patch rectangle outlined, for debugging.
pub fn overlay(img: &ImageBuffer, extraction: &Extraction) -> ImageBuffer {
    image_io::draw_rects(img, &extraction.rects(), [0, 255, 0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::BackendError;
    use crate::synth;

    fn geometry() -> PatchGeometry {
        PatchGeometry::default()
    }

    fn kinds(p: &[SkinPatch]) -> Vec<PatchKind> {
        p.iter().map(|p| p.kind).collect()
    }

    #[test]
    fn frontal_face_yields_four_patches() {
        let (img, lm) = synth::frontal_face(256, 256, 7);
        let patches = patches_from_landmarks(&lm, &img, &geometry()).unwrap();
        assert_eq!(kinds(&patches), PatchKind::ALL.to_vec());
        for p in &patches {
            assert!(img.contains(&p.source_rect));
            assert_eq!(p.pixels.width(), p.source_rect.w);
            assert_eq!(p.pixels.height(), p.source_rect.h);
        }
    }

    #[test]
    fn forehead_clipped_to_ten_percent_is_dropped() {
        // D = 40 and brow line at 0.18 D: the forehead spans
        // [-28.8, 3.2] vertically, so 3.2 / 32 = 10% stays inside.
        let d = 40.0;
        let brow = 0.18 * d;
        let eye_y = brow + 12.0;
        let lm = NamedLandmarks {
            left_eye_center: Point::new(80.0, eye_y),
            right_eye_center: Point::new(120.0, eye_y),
            nose_tip: Point::new(100.0, eye_y + 25.0),
            mouth_left: Point::new(85.0, eye_y + 50.0),
            mouth_right: Point::new(115.0, eye_y + 50.0),
            chin_bottom: Point::new(100.0, eye_y + 85.0),
            left_brow_top: Point::new(75.0, brow),
            right_brow_top: Point::new(125.0, brow),
            face_left: Point::new(50.0, eye_y + 20.0),
            face_right: Point::new(150.0, eye_y + 20.0),
        };
        let nominal = geometry().landmark_rects(&lm)[0].1;
        let visible = (nominal.y1.min(200.0) - nominal.y0.max(0.0)) / (nominal.y1 - nominal.y0);
        assert!((visible - 0.10).abs() < 1e-9);

        let img = ImageBuffer::filled(200, 200, [180, 140, 120]);
        let patches = patches_from_landmarks(&lm, &img, &geometry()).unwrap();
        assert_eq!(
            kinds(&patches),
            vec![PatchKind::LeftCheek, PatchKind::RightCheek, PatchKind::Chin]
        );
    }

    #[test]
    fn too_few_patches_is_geometry_error() {
        // D = 10. Forehead lies above the frame, the right cheek and chin
        // rects are inverted, so only the left cheek is viable.
        let lm = NamedLandmarks {
            left_eye_center: Point::new(3.0, 2.0),
            right_eye_center: Point::new(13.0, 2.0),
            nose_tip: Point::new(8.0, 6.0),
            mouth_left: Point::new(5.0, 9.0),
            mouth_right: Point::new(11.0, 9.0),
            chin_bottom: Point::new(8.0, 10.0),
            left_brow_top: Point::new(2.0, 1.0),
            right_brow_top: Point::new(14.0, 1.0),
            face_left: Point::new(0.0, 4.0),
            face_right: Point::new(14.0, 4.0),
        };
        let img = ImageBuffer::filled(20, 11, [180, 140, 120]);
        let err = patches_from_landmarks(&lm, &img, &geometry()).unwrap_err();
        assert!(matches!(err, Error::Geometry(GeometryError::InsufficientSkinArea { .. })), "{err:?}");
    }

    #[test]
    fn eye_fallback_three_patches_with_margins() {
        // D = 44, eye center (60, 65): chin spans y 153..188.2 inside 200.
        let img = ImageBuffer::filled(200, 200, [180, 140, 120]);
        let eye = EyeBox { rect: Rect::new(50, 60, 20, 10) };
        let p = patches_from_eye(&eye, &img, &geometry()).unwrap();
        assert_eq!(kinds(&p), vec![PatchKind::Forehead, PatchKind::LeftCheek, PatchKind::Chin]);
    }

    #[test]
    fn eye_fallback_drops_chin_near_bottom() {
        // Same eye in a 130 px tall frame: the chin (y >= 153) is fully outside.
        let img = ImageBuffer::filled(200, 130, [180, 140, 120]);
        let eye = EyeBox { rect: Rect::new(50, 60, 20, 10) };
        let p = patches_from_eye(&eye, &img, &geometry()).unwrap();
        assert_eq!(kinds(&p), vec![PatchKind::Forehead, PatchKind::LeftCheek]);
    }

    #[test]
    fn eye_fallback_degenerate_box() {
        let img = ImageBuffer::filled(200, 200, [0, 0, 0]);
        let eye = EyeBox { rect: Rect::new(50, 60, 0, 10) };
        assert!(matches!(
            patches_from_eye(&eye, &img, &geometry()),
            Err(Error::Geometry(GeometryError::DegenerateEyeBox))
        ));
    }

    #[test]
    fn detect_landmarks_identity_and_not_found() {
        let (img, lm) = synth::frontal_face(256, 256, 1);
        let mut backend = SidecarBackend::new();
        backend.insert_landmarks(&img, lm);
        assert_eq!(detect_landmarks(&backend, &img).unwrap(), Some(lm));
        let blank = ImageBuffer::filled(256, 256, [0, 0, 0]);
        assert_eq!(detect_landmarks(&backend, &blank).unwrap(), None);
    }

    #[test]
    fn swapped_eyes_are_backend_error() {
        let (img, mut lm) = synth::frontal_face(256, 256, 1);
        std::mem::swap(&mut lm.left_eye_center, &mut lm.right_eye_center);
        let mut backend = SidecarBackend::new();
        backend.insert_landmarks(&img, lm);
        assert!(matches!(
            detect_landmarks(&backend, &img),
            Err(Error::Backend(BackendError::InvalidLandmarks(_)))
        ));
    }

    #[test]
    fn single_eye_picks_highest_confidence() {
        let img = ImageBuffer::filled(100, 100, [0, 0, 0]);
        let mut backend = SidecarBackend::new();
        let eyes = parse_eye_sidecar(
            "eye 10 10 8 4 0.4\neye 60 20 10 5 0.9\n",
            std::path::Path::new("fixture.eye"),
        )
        .unwrap();
        backend.insert_eyes(&img, eyes);
        let eye = detect_single_eye(&backend, &img).unwrap().unwrap();
        assert_eq!(eye.rect, Rect::new(60, 20, 10, 5));
        assert_eq!(detect_single_eye(&NullBackend, &img).unwrap(), None);
    }

    #[test]
    fn coupling_order() {
        let (front, lm) = synth::frontal_face(256, 256, 3);
        let (side, eye) = synth::profile_face(256, 256, 3);
        let mut sidecar = SidecarBackend::new();
        sidecar.insert_landmarks(&front, lm);
        sidecar.insert_eyes(&side, vec![EyeCandidate { rect: eye.rect, confidence: 1.0 }]);

        let a = extract_patches(&sidecar, &sidecar, &front, &geometry()).unwrap();
        assert_eq!(a.path, ExtractionPath::Landmarks);
        assert_eq!(a.patches.len(), 4);
        let b = extract_patches(&sidecar, &sidecar, &side, &geometry()).unwrap();
        assert_eq!(b.path, ExtractionPath::EyeFallback);
        assert!((2..=3).contains(&b.patches.len()));
        let blank = ImageBuffer::filled(256, 256, [0, 0, 0]);
        assert!(matches!(
            extract_patches(&sidecar, &sidecar, &blank, &geometry()),
            Err(Error::NoFaceFound)
        ));
    }

    #[test]
    fn labels_propagate_to_every_patch() {
        let (img, lm) = synth::frontal_face(256, 256, 4);
        let mut sidecar = SidecarBackend::new();
        sidecar.insert_landmarks(&img, lm);
        let label = SeverityLabel::new(4).unwrap();
        let ex = extract_patches(&sidecar, &NullBackend, &img, &geometry())
            .unwrap()
            .labeled(label);
        assert!(ex.patches.iter().all(|p| p.label == Some(label)));
    }

    #[test]
    fn command_backend_round_trip() {
        let (img, lm) = synth::frontal_face(256, 256, 5);
        let dir = tempfile::tempdir().unwrap();
        let answer = dir.path().join("answer.txt");
        std::fs::write(&answer, lm.to_sidecar()).unwrap();
        let found = CommandBackend::new(
            "sh",
            vec!["-c".into(), format!("cat >/dev/null; cat {}", answer.display())],
        );
        assert_eq!(detect_landmarks(&found, &img).unwrap(), Some(lm));
        let nothing = CommandBackend::new("sh", vec!["-c".into(), "cat >/dev/null".into()]);
        assert_eq!(detect_landmarks(&nothing, &img).unwrap(), None);
        let failing = CommandBackend::new("sh", vec!["-c".into(), "exit 3".into()]);
        assert!(matches!(detect_landmarks(&failing, &img), Err(Error::Backend(_))));
        let missing = CommandBackend::new("/nonexistent/detector", vec![]);
        assert!(matches!(
            detect_landmarks(&missing, &img),
            Err(Error::Backend(BackendError::Artifact { .. }))
        ));
    }

    #[test]
    fn sidecar_dir_pairs_images_by_stem() {
        let (img, lm) = synth::frontal_face(256, 256, 6);
        let dir = tempfile::tempdir().unwrap();
        image_io::save_png(&img, dir.path().join("face01.png")).unwrap();
        std::fs::write(dir.path().join("face01.landmarks"), lm.to_sidecar()).unwrap();
        let backend = SidecarBackend::from_dir(dir.path()).unwrap();
        assert_eq!(backend.detect(&img).unwrap(), Some(lm));
    }

    #[test]
    fn extraction_is_deterministic() {
        let (img, lm) = synth::frontal_face(300, 280, 9);
        let a = patches_from_landmarks(&lm, &img, &geometry()).unwrap();
        let b = patches_from_landmarks(&lm, &img.clone(), &geometry()).unwrap();
        assert_eq!(a, b);
    }
}
