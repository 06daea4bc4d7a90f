//! Detector backends behind the landmark and single-eye contracts.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use super::landmarks::{parse_eye_sidecar, EyeCandidate, NamedLandmarks};
use crate::error::{BackendError, Error, Result};
use crate::image_io;
use crate::types::ImageBuffer;

/// Finds the ten named facial points, or reports that there is no face.
pub trait LandmarkBackend: Send + Sync {
    /// `Ok(None)` means the detector ran and found no face.
    fn detect(&self, img: &ImageBuffer) -> Result<Option<NamedLandmarks>, BackendError>;

    /// Whether `detect` may be called from several threads at once.
    fn is_concurrent(&self) -> bool {
        true
    }
}

/// Finds single eyes, each with a confidence.
pub trait EyeBackend: Send + Sync {
    fn detect_eyes(&self, img: &ImageBuffer) -> Result<Vec<EyeCandidate>, BackendError>;

    fn is_concurrent(&self) -> bool {
        true
    }
}

/// Annotation-file backend. Annotations are keyed by the decoded image's
/// pixel digest, so they follow an image across file names and lossless
/// re-encodings.
#[derive(Debug, Default, Clone)]
pub struct SidecarBackend {
    landmarks: HashMap<[u8; 32], NamedLandmarks>,
    eyes: HashMap<[u8; 32], Vec<EyeCandidate>>,
}

pub const LANDMARK_EXT: &str = "landmarks";
pub const EYE_EXT: &str = "eye";
const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

impl SidecarBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_landmarks(&mut self, img: &ImageBuffer, lm: NamedLandmarks) {
        self.landmarks.insert(img.digest(), lm);
    }

    pub fn insert_eyes(&mut self, img: &ImageBuffer, eyes: Vec<EyeCandidate>) {
        self.eyes.insert(img.digest(), eyes);
    }

    /// Reads `<stem>.landmarks` and `<stem>.eye` from `dir` for an image
    /// already decoded. Absent files are fine; malformed ones are errors.
    pub fn load_for(&mut self, img: &ImageBuffer, dir: &Path, stem: &str) -> Result<()> {
        let lm_path = dir.join(format!("{stem}.{LANDMARK_EXT}"));
        if let Some(text) = read_optional(&lm_path)? {
            self.insert_landmarks(img, NamedLandmarks::parse_sidecar(&text, &lm_path)?);
        }
        let eye_path = dir.join(format!("{stem}.{EYE_EXT}"));
        if let Some(text) = read_optional(&eye_path)? {
            self.insert_eyes(img, parse_eye_sidecar(&text, &eye_path)?);
        }
        Ok(())
    }

    /// Scans `dir` for images with sibling annotation files.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut backend = Self::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut images: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        images.sort();
        for path in images {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let has_sidecar = [LANDMARK_EXT, EYE_EXT]
                .iter()
                .any(|ext| dir.join(format!("{stem}.{ext}")).exists());
            if has_sidecar {
                let img = image_io::load(&path)?;
                backend.load_for(&img, dir, stem)?;
            }
        }
        Ok(backend)
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty() && self.eyes.is_empty()
    }
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    match std::fs::read_to_string(path) {
        Ok(t) => Ok(Some(t)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

impl LandmarkBackend for SidecarBackend {
    fn detect(&self, img: &ImageBuffer) -> Result<Option<NamedLandmarks>, BackendError> {
        Ok(self.landmarks.get(&img.digest()).copied())
    }
}

impl EyeBackend for SidecarBackend {
    fn detect_eyes(&self, img: &ImageBuffer) -> Result<Vec<EyeCandidate>, BackendError> {
        Ok(self.eyes.get(&img.digest()).cloned().unwrap_or_default())
    }
}

/// A backend that never finds anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullBackend;

impl LandmarkBackend for NullBackend {
    fn detect(&self, _: &ImageBuffer) -> Result<Option<NamedLandmarks>, BackendError> {
        Ok(None)
    }
}

impl EyeBackend for NullBackend {
    fn detect_eyes(&self, _: &ImageBuffer) -> Result<Vec<EyeCandidate>, BackendError> {
        Ok(Vec::new())
    }
}

/// Wraps an external detector process.
///
/// The image is written to the process's stdin as PNG. It answers on stdout
/// in the sidecar formats: ten `name x y` lines for landmarks, or
/// `eye x y w h [confidence]` lines for eyes. Empty output means nothing was
/// found; a non-zero exit status is a backend failure.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    program: PathBuf,
    args: Vec<String>,
}

impl CommandBackend {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    fn run(&self, img: &ImageBuffer) -> Result<String, BackendError> {
        let png = image_io::encode_png(img).map_err(|e| BackendError::Failed(e.to_string()))?;
        let artifact = |reason: String| BackendError::Artifact {
            path: self.program.clone(),
            reason,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| artifact(e.to_string()))?;
        // A detector may exit without draining stdin; a broken pipe here is
        // judged by the exit status below.
        let _ = child.stdin.take().expect("piped stdin").write_all(&png);
        let out = child.wait_with_output().map_err(|e| artifact(e.to_string()))?;
        if !out.status.success() {
            return Err(BackendError::Failed(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        String::from_utf8(out.stdout).map_err(|e| BackendError::Failed(e.to_string()))
    }
}

impl LandmarkBackend for CommandBackend {
    fn detect(&self, img: &ImageBuffer) -> Result<Option<NamedLandmarks>, BackendError> {
        let text = self.run(img)?;
        if text.trim().is_empty() {
            return Ok(None);
        }
        NamedLandmarks::parse_sidecar(&text, &self.program).map(Some)
    }
}

impl EyeBackend for CommandBackend {
    fn detect_eyes(&self, img: &ImageBuffer) -> Result<Vec<EyeCandidate>, BackendError> {
        parse_eye_sidecar(&self.run(img)?, &self.program)
    }
}
