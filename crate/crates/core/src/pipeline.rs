//! Backend selection from `key=value` settings, shared by every front end.

use std::path::PathBuf;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::face_patches::{
    CommandBackend, DetectParams, EyeBackend, HaarEyeBackend, LandmarkBackend, NullBackend,
    PatchGeometry, SidecarBackend,
};
use crate::model::{load_head, EmbeddingBackend, ProjectionBackend, RegressionHead, Scorer};

/// Which detectors, embedding backend and head to use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineSettings {
    /// ONNX backbone file.
    pub backbone_path: Option<PathBuf>,
    pub head_path: Option<PathBuf>,
    /// Backbone input side in pixels.
    pub input_side: Option<u32>,
    /// Use the seeded projection backend instead of a backbone.
    pub test_backend: bool,
    pub test_backend_seed: u64,
    /// Directory of `<stem>.landmarks` / `<stem>.eye` sidecars next to images.
    pub landmarks_dir: Option<PathBuf>,
    /// External landmark detector; whitespace-separated program and args.
    pub landmark_command: Option<String>,
    /// OpenCV Haar cascade XML for single-eye detection.
    pub eye_cascade: Option<PathBuf>,
}

impl PipelineSettings {
    pub const KEYS: &'static [&'static str] = &[
        "backbone_path",
        "head_path",
        "input_side",
        "test_backend",
        "test_backend_seed",
        "landmarks_dir",
        "landmark_command",
        "eye_cascade",
    ];

    /// Reads the keys in [`Self::KEYS`]; other keys are left to the caller.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let path = |k: &str| kv.get_str(k).map(PathBuf::from);
        Ok(Self {
            backbone_path: path("backbone_path"),
            head_path: path("head_path"),
            input_side: kv.get("input_side")?,
            test_backend: kv.get("test_backend")?.unwrap_or(false),
            test_backend_seed: kv.get("test_backend_seed")?.unwrap_or(0),
            landmarks_dir: path("landmarks_dir"),
            landmark_command: kv.get_str("landmark_command").map(str::to_owned),
            eye_cascade: path("eye_cascade"),
        })
    }

    fn sidecars(&self) -> Result<Option<SidecarBackend>> {
        self.landmarks_dir
            .as_ref()
            .map(SidecarBackend::from_dir)
            .transpose()
    }

    fn command(&self) -> Option<CommandBackend> {
        let line = self.landmark_command.as_deref()?;
        let mut parts = line.split_whitespace().map(str::to_owned);
        let program = parts.next()?;
        Some(CommandBackend::new(program, parts.collect()))
    }

    /// External command, else sidecars, else nothing.
    pub fn landmark_backend(&self) -> Result<Box<dyn LandmarkBackend>> {
        if let Some(c) = self.command() {
            return Ok(Box::new(c));
        }
        Ok(match self.sidecars()? {
            Some(s) => Box::new(s),
            None => Box::new(NullBackend),
        })
    }

    /// Haar cascade, else sidecars, else nothing.
    pub fn eye_backend(&self) -> Result<Box<dyn EyeBackend>> {
        if let Some(path) = &self.eye_cascade {
            return Ok(Box::new(HaarEyeBackend::load(path, DetectParams::default())?));
        }
        Ok(match self.sidecars()? {
            Some(s) => Box::new(s),
            None => Box::new(NullBackend),
        })
    }

    pub fn embedding_backend(&self) -> Result<Box<dyn EmbeddingBackend>> {
        match (&self.backbone_path, self.test_backend) {
            (Some(_), true) => Err(Error::Config(
                "backbone_path and test_backend are mutually exclusive".into(),
            )),
            (None, true) => {
                let side = self.input_side.unwrap_or(ProjectionBackend::DEFAULT_SIDE);
                Ok(Box::new(ProjectionBackend::new(
                    side,
                    ProjectionBackend::DEFAULT_GRID,
                    ProjectionBackend::DEFAULT_DIM,
                    self.test_backend_seed,
                )?))
            }
            (Some(path), false) => onnx_backend(path, self.input_side.unwrap_or(224)),
            (None, false) => Err(Error::Config(
                "no embedding backend: set backbone_path or test_backend".into(),
            )),
        }
    }

    pub fn load_head(&self) -> Result<RegressionHead> {
        let path = self
            .head_path
            .as_ref()
            .ok_or_else(|| Error::Config("head_path is not set".into()))?;
        load_head(path)
    }

    pub fn scorer(&self) -> Result<Scorer> {
        Scorer::new(
            self.landmark_backend()?,
            self.eye_backend()?,
            self.embedding_backend()?,
            self.load_head()?,
            PatchGeometry::default(),
        )
    }
}

#[cfg(feature = "onnx")]
fn onnx_backend(path: &std::path::Path, side: u32) -> Result<Box<dyn EmbeddingBackend>> {
    Ok(Box::new(crate::model::OnnxBackend::load(path, side)?))
}

#[cfg(not(feature = "onnx"))]
fn onnx_backend(path: &std::path::Path, _side: u32) -> Result<Box<dyn EmbeddingBackend>> {
    Err(Error::Backend(crate::error::BackendError::Artifact {
        path: path.to_path_buf(),
        reason: "built without the `onnx` feature".into(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_from_kv() {
        let kv = KeyValues::parse("test_backend=true\ntest_backend_seed=7\nhead_path=/x/h.bin\n").unwrap();
        let s = PipelineSettings::from_kv(&kv).unwrap();
        assert!(s.test_backend);
        assert_eq!(s.test_backend_seed, 7);
        assert_eq!(s.embedding_backend().unwrap().dim(), 256);
        assert!(matches!(s.load_head(), Err(Error::Io { .. })));
    }

    #[test]
    fn backend_choice_is_validated() {
        let none = PipelineSettings::default();
        assert!(matches!(none.embedding_backend(), Err(Error::Config(_))));
        let both = PipelineSettings {
            backbone_path: Some("b.onnx".into()),
            test_backend: true,
            ..Default::default()
        };
        assert!(matches!(both.embedding_backend(), Err(Error::Config(_))));
        let missing = PipelineSettings {
            backbone_path: Some("/nonexistent/b.onnx".into()),
            ..Default::default()
        };
        assert!(matches!(missing.embedding_backend(), Err(Error::Backend(_))));
    }
}
