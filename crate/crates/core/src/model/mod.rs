//! Patch embedding, the severity regression head and whole-image scoring.

mod artifact;
mod embedding;
mod head;

use std::sync::Mutex;

use serde::Serialize;

pub use artifact::{decode_head, encode_head, fingerprint, load_head, save_head, FORMAT_VERSION, MAGIC};
#[cfg(feature = "onnx")]
pub use embedding::OnnxBackend;
pub use embedding::{EmbeddingBackend, EmbeddingVector, ProjectionBackend};
pub use head::{
    fit, stack_embeddings, train_head, train_regression, Activation, Dense, Float, Gradients, Mlp,
    RegressionHead, TrainConfig, TrainReport, DEFAULT_HIDDEN,
};

use crate::error::{Error, Result};
use crate::face_patches::{
    extract_patches, EyeBackend, ExtractionPath, LandmarkBackend, PatchGeometry, SkinPatch,
};
use crate::image_io::resize_square;
use crate::types::{clamp_score, ImageBuffer, PatchKind, Rect, SeverityLabel, SeverityScore};

/// Class boundaries on the continuous severity scale.
pub const BOUNDARIES: [f64; 4] = [1.5, 2.5, 3.5, 4.5];

/// Maps a score to its half-open class cell; a boundary value belongs to the
/// higher class.
pub fn discretize(s: SeverityScore) -> SeverityLabel {
    let above = BOUNDARIES.iter().filter(|b| s.value() >= **b).count();
    SeverityLabel::from_index(above).expect("at most four boundaries")
}

/// Mean of raw patch outputs, clamped, and its class.
pub fn aggregate(raw: &[f64]) -> Result<(SeverityScore, SeverityLabel)> {
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let final_score = clamp_score(raw.iter().sum::<f64>() / raw.len() as f64)?;
    Ok((final_score, discretize(final_score)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchScore {
    pub kind: PatchKind,
    pub rect: Rect,
    pub raw: f64,
    pub score: SeverityScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub image_id: String,
    pub patch_scores: Vec<PatchScore>,
    pub final_score: SeverityScore,
    pub class: SeverityLabel,
    pub extraction: ExtractionPath,
}

/// Resizes `pixels` to the backend's input side and embeds it.
pub fn embed_patch(backend: &dyn EmbeddingBackend, pixels: &ImageBuffer) -> Result<EmbeddingVector> {
    let side = backend.input_side();
    if pixels.width() == side && pixels.height() == side {
        backend.embed(pixels)
    } else {
        backend.embed(&resize_square(pixels, side))
    }
}

/// Raw head output for one patch.
pub fn score_patch(
    backend: &dyn EmbeddingBackend,
    head: &RegressionHead,
    pixels: &ImageBuffer,
) -> Result<f64> {
    let e = embed_patch(backend, pixels)?;
    Ok(f64::from(head.forward_one(e.values())?))
}

/// Fails unless the head accepts the backend's vectors.
pub fn check_compatible(backend: &dyn EmbeddingBackend, head: &RegressionHead) -> Result<()> {
    if backend.dim() != head.input_dim() {
        return Err(Error::InputShape {
            expected: format!("embedding dimension {} (head input)", head.input_dim()),
            actual: format!("dimension {} from {}", backend.dim(), backend.describe()),
        });
    }
    Ok(())
}

fn score_extracted(
    image_id: &str,
    path: ExtractionPath,
    patches: &[SkinPatch],
    backend: &dyn EmbeddingBackend,
    head: &RegressionHead,
) -> Result<ImageScore> {
    let patch_scores = patches
        .iter()
        .map(|p| {
            let raw = score_patch(backend, head, &p.pixels)?;
            Ok(PatchScore {
                kind: p.kind,
                rect: p.source_rect,
                raw,
                score: clamp_score(raw)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = patch_scores.iter().map(|p| p.raw).collect();
    let (final_score, class) = aggregate(&raw)?;
    Ok(ImageScore {
        image_id: image_id.to_owned(),
        patch_scores,
        final_score,
        class,
        extraction: path,
    })
}

/// Extracts unaugmented patches, scores each, and averages.
pub fn score_image(
    image_id: &str,
    img: &ImageBuffer,
    landmark_backend: &dyn LandmarkBackend,
    eye_backend: &dyn EyeBackend,
    embedding_backend: &dyn EmbeddingBackend,
    head: &RegressionHead,
    geometry: &PatchGeometry,
) -> Result<ImageScore> {
    check_compatible(embedding_backend, head)?;
    let extraction = extract_patches(landmark_backend, eye_backend, img, geometry)?;
    score_extracted(image_id, extraction.path, &extraction.patches, embedding_backend, head)
}

/// Owns every backend and the head, for repeated scoring.
///
/// Calls are serialized when any backend reports that it cannot run
/// concurrently.
pub struct Scorer {
    landmarks: Box<dyn LandmarkBackend>,
    eyes: Box<dyn EyeBackend>,
    embedder: Box<dyn EmbeddingBackend>,
    head: RegressionHead,
    geometry: PatchGeometry,
    gate: Option<Mutex<()>>,
}

impl std::fmt::Debug for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scorer")
            .field("embedder", &self.embedder.describe())
            .field("head_widths", &self.head.widths())
            .field("serialized", &self.gate.is_some())
            .finish()
    }
}

impl Scorer {
    pub fn new(
        landmarks: Box<dyn LandmarkBackend>,
        eyes: Box<dyn EyeBackend>,
        embedder: Box<dyn EmbeddingBackend>,
        head: RegressionHead,
        geometry: PatchGeometry,
    ) -> Result<Self> {
        check_compatible(embedder.as_ref(), &head)?;
        let serial =
            !(landmarks.is_concurrent() && eyes.is_concurrent() && embedder.is_concurrent());
        Ok(Self {
            landmarks,
            eyes,
            embedder,
            head,
            geometry,
            gate: serial.then(|| Mutex::new(())),
        })
    }

    /// True when calls are run one at a time.
    pub fn is_serialized(&self) -> bool {
        self.gate.is_some()
    }

    pub fn head(&self) -> &RegressionHead {
        &self.head
    }

    pub fn embedder(&self) -> &dyn EmbeddingBackend {
        self.embedder.as_ref()
    }

    pub fn score(&self, image_id: &str, img: &ImageBuffer) -> Result<ImageScore> {
        let _guard = self
            .gate
            .as_ref()
            .map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        score_image(
            image_id,
            img,
            self.landmarks.as_ref(),
            self.eyes.as_ref(),
            self.embedder.as_ref(),
            &self.head,
            &self.geometry,
        )
    }
}
