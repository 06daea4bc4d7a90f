//! Patch embedding backends.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::{luma, ImageBuffer};

/// A finite feature vector produced by an [`EmbeddingBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InputShape {
                expected: "finite embedding values".into(),
                actual: format!("non-finite value at index {i}"),
            });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

/// Maps a square patch of side [`input_side`](Self::input_side) to a vector
/// of fixed dimension [`dim`](Self::dim).
pub trait EmbeddingBackend: Send + Sync {
    fn dim(&self) -> usize;

    fn input_side(&self) -> u32;

    fn embed(&self, patch: &ImageBuffer) -> Result<EmbeddingVector>;

    /// Whether `embed` may be called from several threads at once.
    fn is_concurrent(&self) -> bool {
        true
    }

    fn describe(&self) -> String;
}

pub(crate) fn check_side(patch: &ImageBuffer, side: u32) -> Result<()> {
    if patch.width() != side || patch.height() != side {
        return Err(Error::InputShape {
            expected: format!("{side}x{side} patch"),
            actual: format!("{}x{}", patch.width(), patch.height()),
        });
    }
    Ok(())
}

/// Deterministic lightweight backend: the patch is converted to luma in
/// `[0, 1]`, block-averaged onto a `grid x grid` raster, and multiplied by a
/// fixed Gaussian matrix (scaled by `1/grid`) drawn from `seed`. The map is
/// linear with no bias, so a black patch embeds to zero.
#[derive(Debug, Clone)]
pub struct ProjectionBackend {
    input_side: u32,
    grid: u32,
    dim: usize,
    seed: u64,
    // dim rows of grid*grid
    projection: Vec<f64>,
}

impl ProjectionBackend {
    pub const DEFAULT_DIM: usize = 256;
    pub const DEFAULT_GRID: u32 = 4;
    pub const DEFAULT_SIDE: u32 = 224;

    pub fn new(input_side: u32, grid: u32, dim: usize, seed: u64) -> Result<Self> {
        if grid == 0 || input_side < grid || dim == 0 {
            return Err(Error::InputShape {
                expected: "input side >= grid >= 1 and dim >= 1".into(),
                actual: format!("side {input_side}, grid {grid}, dim {dim}"),
            });
        }
        let cells = (grid * grid) as usize;
        let scale = 1.0 / f64::from(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..dim * cells)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Ok(Self {
            input_side,
            grid,
            dim,
            seed,
            projection,
        })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(Self::DEFAULT_SIDE, Self::DEFAULT_GRID, Self::DEFAULT_DIM, seed)
            .expect("default parameters are valid")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Block-averaged luma raster in `[0, 1]`, row-major.
    pub fn pooled_luma(&self, patch: &ImageBuffer) -> Vec<f64> {
        let (side, grid) = (self.input_side as usize, self.grid as usize);
        let mut cells = vec![0.0; grid * grid];
        for gy in 0..grid {
            let (y0, y1) = (gy * side / grid, (gy + 1) * side / grid);
            for gx in 0..grid {
                let (x0, x1) = (gx * side / grid, (gx + 1) * side / grid);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let [r, g, b] = patch.pixel(x as u32, y as u32);
                        sum += luma(r, g, b);
                    }
                }
                cells[gy * grid + gx] = sum / (255.0 * ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
        cells
    }
}

impl EmbeddingBackend for ProjectionBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn input_side(&self) -> u32 {
        self.input_side
    }

    fn embed(&self, patch: &ImageBuffer) -> Result<EmbeddingVector> {
        check_side(patch, self.input_side)?;
        let cells = self.pooled_luma(patch);
        let values = self
            .projection
            .chunks_exact(cells.len())
            .map(|row| row.iter().zip(&cells).map(|(w, c)| w * c).sum::<f64>() as f32)
            .collect();
        EmbeddingVector::new(values)
    }

    fn describe(&self) -> String {
        format!(
            "projection(side={}, grid={}, dim={}, seed={})",
            self.input_side, self.grid, self.dim, self.seed
        )
    }
}

#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;

#[cfg(feature = "onnx")]
mod onnx {
    use std::path::{Path, PathBuf};

    use tract_onnx::prelude::*;

    use super::{check_side, EmbeddingBackend, EmbeddingVector};
    use crate::error::{BackendError, Error, Result};
    use crate::types::ImageBuffer;

    const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
    const STD: [f32; 3] = [0.229, 0.224, 0.225];

    type Plan = SimplePlan<TypedFact, Box<dyn TypedOp>, Graph<TypedFact, Box<dyn TypedOp>>>;

    /// Pretrained convolutional backbone loaded from an ONNX file.
    ///
    /// Input is a `1x3xSxS` float tensor normalized with the ImageNet channel
    /// statistics. The first output is taken as the feature vector; spatial
    /// dimensions larger than one are average-pooled.
    pub struct OnnxBackend {
        plan: Plan,
        side: u32,
        dim: usize,
        path: PathBuf,
    }

    fn artifact(path: &Path, reason: impl ToString) -> Error {
        Error::Backend(BackendError::Artifact {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        })
    }

    impl OnnxBackend {
        pub fn load(path: impl AsRef<Path>, side: u32) -> Result<Self> {
            let path = path.as_ref();
            if !path.exists() {
                return Err(artifact(path, "file not found"));
            }
            let plan = tract_onnx::onnx()
                .model_for_path(path)
                .and_then(|m| {
                    m.with_input_fact(
                        0,
                        f32::fact([1, 3, side as usize, side as usize]).into(),
                    )
                })
                .and_then(|m| m.into_optimized())
                .and_then(|m| m.into_runnable())
                .map_err(|e| artifact(path, e))?;
            let mut backend = Self {
                plan,
                side,
                dim: 0,
                path: path.to_path_buf(),
            };
            let probe = ImageBuffer::filled(side, side, [128, 128, 128]);
            backend.dim = backend.run(&probe)?.len();
            Ok(backend)
        }

        fn run(&self, patch: &ImageBuffer) -> Result<Vec<f32>> {
            let s = self.side as usize;
            let input = tract_ndarray::Array4::from_shape_fn((1, 3, s, s), |(_, c, y, x)| {
                let v = f32::from(patch.pixel(x as u32, y as u32)[c]) / 255.0;
                (v - MEAN[c]) / STD[c]
            });
            let outputs = self
                .plan
                .run(tvec!(Tensor::from(input).into()))
                .map_err(|e| Error::Backend(BackendError::Failed(e.to_string())))?;
            let out = outputs[0]
                .to_array_view::<f32>()
                .map_err(|e| Error::Backend(BackendError::Failed(e.to_string())))?;
            let shape = out.shape().to_vec();
            let values: Vec<f32> = match shape.as_slice() {
                [1, c, h, w] if h * w > 1 => {
                    let area = (h * w) as f32;
                    (0..*c)
                        .map(|ch| {
                            out.index_axis(tract_ndarray::Axis(1), ch).iter().sum::<f32>() / area
                        })
                        .collect()
                }
                _ => out.iter().copied().collect(),
            };
            Ok(values)
        }
    }

    impl EmbeddingBackend for OnnxBackend {
        fn dim(&self) -> usize {
            self.dim
        }

        fn input_side(&self) -> u32 {
            self.side
        }

        fn embed(&self, patch: &ImageBuffer) -> Result<EmbeddingVector> {
            check_side(patch, self.side)?;
            EmbeddingVector::new(self.run(patch)?)
        }

        fn describe(&self) -> String {
            format!("onnx({}, side={}, dim={})", self.path.display(), self.side, self.dim)
        }
    }
}
