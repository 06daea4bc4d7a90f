//! Selfie-based acne severity assessment.
//!
//! Skin patches are cut from forehead, cheeks and chin, embedded by a
//! pretrained backbone and scored by a small regression head; the image score
//! is the mean of its patch scores. Training data is balanced by rolling
//! patches circularly along one axis.

pub mod augmentation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod face_patches;
pub mod image_io;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod types;

pub use error::{BackendError, Error, GeometryError, Result};
pub use types::{
    clamp_score, ImageBuffer, PatchKind, Rect, SeverityLabel, SeverityScore, MAX_SEVERITY,
    MIN_SEVERITY,
};
