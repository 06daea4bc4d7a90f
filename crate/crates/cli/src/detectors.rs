use std::path::{Path, PathBuf};

use acne_core::face_patches::{EyeBackend, LandmarkBackend, NullBackend, SidecarBackend};
use acne_core::pipeline::PipelineSettings;
use acne_core::{ImageBuffer, Result};

/// Landmark and eye detectors for images read from disk. Sidecar files are
/// looked up per image as `<dir>/<image stem>.landmarks` and `.eye`.
pub struct Detectors {
    sidecars: Option<(PathBuf, SidecarBackend)>,
    landmarks: Option<Box<dyn LandmarkBackend>>,
    eyes: Option<Box<dyn EyeBackend>>,
}

impl Detectors {
    pub fn new(settings: &PipelineSettings) -> Result<Self> {
        let mut s = settings.clone();
        let dir = s.landmarks_dir.take();
        let landmarks = match s.landmark_command {
            Some(_) => Some(s.landmark_backend()?),
            None => None,
        };
        let eyes = match s.eye_cascade {
            Some(_) => Some(s.eye_backend()?),
            None => None,
        };
        Ok(Self {
            sidecars: dir.map(|d| (d, SidecarBackend::new())),
            landmarks,
            eyes,
        })
    }

    pub fn prepare(&mut self, img: &ImageBuffer, image_path: &Path) -> Result<()> {
        if let Some((dir, sidecars)) = &mut self.sidecars {
            let stem = image_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            sidecars.load_for(img, dir, stem)?;
        }
        Ok(())
    }

    pub fn landmarks(&self) -> &dyn LandmarkBackend {
        match (&self.landmarks, &self.sidecars) {
            (Some(b), _) => b.as_ref(),
            (None, Some((_, s))) => s,
            (None, None) => &NullBackend,
        }
    }

    pub fn eyes(&self) -> &dyn EyeBackend {
        match (&self.eyes, &self.sidecars) {
            (Some(b), _) => b.as_ref(),
            (None, Some((_, s))) => s,
            (None, None) => &NullBackend,
        }
    }
}
