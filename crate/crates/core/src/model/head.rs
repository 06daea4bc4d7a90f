//! Fully connected regression head: rectifier hidden layers, identity scalar
//! output, trained by plain minibatch gradient descent on mean squared error.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, ScalarOperand};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::types::SeverityLabel;

/// Hidden widths used for severity scoring.
pub const DEFAULT_HIDDEN: [usize; 3] = [1024, 512, 256];

pub trait Float:
    ndarray::LinalgScalar
    + num_traits::Float
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + Debug
    + 'static
{
}

impl Float for f32 {}
impl Float for f64 {}

fn cast<F: Float>(v: f64) -> F {
    <F as num_traits::NumCast>::from(v).expect("f64 converts to any Float")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Self::Relu => 0,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        (tag == 0).then_some(Self::Relu)
    }
}

/// One affine layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    layers: Vec<Dense<F>>,
    activation: Activation,
    seed: u64,
}

/// The severity head as trained and shipped.
pub type RegressionHead = Mlp<f32>;

/// Per-layer parameter gradients, same shapes as the layers.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub layers: Vec<Dense<F>>,
}

impl<F: Float> Gradients<F> {
    pub fn flatten(&self) -> Vec<F> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers<F: Float>(layers: &[Dense<F>]) -> Vec<F> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

impl<F: Float> Mlp<F> {
    /// Builds a head with `widths = [d, hidden..., 1]`. Weights are drawn
    /// uniformly from `±sqrt(6 / fan_in)` with a seeded generator; biases
    /// start at zero.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        validate_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    cast(rng.random_range(-bound..bound))
                });
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation: Activation::Relu,
            seed,
        })
    }

    /// Assembles a head from explicit layers, checking the shape chain.
    pub fn from_layers(layers: Vec<Dense<F>>, activation: Activation, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ModelFormat("head has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::ModelFormat(format!("layer {i}: bias/weight mismatch")));
            }
            if i > 0 && layers[i - 1].weights.nrows() != l.weights.ncols() {
                return Err(Error::ModelFormat(format!("layer {i}: input width mismatch")));
            }
        }
        if layers.last().unwrap().weights.nrows() != 1 {
            return Err(Error::ModelFormat("output layer must have width 1".into()));
        }
        Ok(Self {
            layers,
            activation,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    /// `[d, hidden..., 1]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.nrows()))
            .collect()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn parameters(&self) -> Vec<F> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters(&mut self, params: &[F]) {
        assert_eq!(params.len(), self.parameter_count(), "parameter count");
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::InputShape {
                expected: format!("embedding of dimension {}", self.input_dim()),
                actual: format!("dimension {got}"),
            });
        }
        Ok(())
    }

    /// Raw (unclamped) output for one input row.
    pub fn forward_one(&self, x: &[F]) -> Result<F> {
        self.check_dim(x.len())?;
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.forward(row)[0])
    }

    /// Raw outputs for a batch (`rows x d`).
    pub fn forward(&self, x: ArrayView2<F>) -> Array1<F> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weights.t());
            z += &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(F::zero()));
            }
            a = z;
        }
        a.index_axis_move(Axis(1), 0)
    }

    /// Mean squared error of raw outputs against `targets`.
    pub fn mse(&self, x: ArrayView2<F>, targets: ArrayView1<F>) -> F {
        let y = self.forward(x);
        let n: F = cast(targets.len() as f64);
        y.iter()
            .zip(targets.iter())
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .fold(F::zero(), |s, v| s + v)
            / n
    }

    /// Mean squared error and its gradient with respect to every parameter,
    /// by backpropagation.
    pub fn loss_and_gradients(&self, x: ArrayView2<F>, targets: ArrayView1<F>) -> (F, Gradients<F>) {
        let n = x.nrows();
        let last = self.layers.len() - 1;
        // inputs[l] is the input to layer l
        let mut inputs: Vec<Array2<F>> = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weights.t());
            z += &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(F::zero()));
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        let y = a.index_axis_move(Axis(1), 0);
        let nf: F = cast(n as f64);
        let resid = &y - &targets;
        let loss = resid.iter().fold(F::zero(), |s, r| s + *r * *r) / nf;

        let two: F = cast(2.0);
        let mut delta = (resid * (two / nf)).insert_axis(Axis(1));
        let mut grads: Vec<Dense<F>> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let weights = delta.t().dot(&inputs[l]);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights);
                ndarray::Zip::from(&mut back)
                    .and(&inputs[l])
                    .for_each(|d, a| {
                        if *a <= F::zero() {
                            *d = F::zero();
                        }
                    });
                delta = back;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }

    /// Rewrites the first layer so that the head applied to `x` equals the
    /// current head applied to `(x - mean) / scale`.
    pub fn fold_input_affine(&mut self, mean: &Array1<F>, scale: &Array1<F>) {
        let first = &mut self.layers[0];
        for mut row in first.weights.rows_mut() {
            row.zip_mut_with(scale, |w, s| *w = *w / *s);
        }
        let shift = first.weights.dot(mean);
        first.bias -= &shift;
    }

    pub fn apply_gradients(&mut self, grads: &Gradients<F>, learning_rate: F) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weights.scaled_add(-learning_rate, &g.weights);
            l.bias.scaled_add(-learning_rate, &g.bias);
        }
    }
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) || *widths.last().unwrap() != 1 {
        return Err(Error::InputShape {
            expected: "widths [d, hidden..., 1] with positive entries".into(),
            actual: format!("{widths:?}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
    /// Train on per-feature standardized inputs and fold the affine map
    /// into the first layer afterwards.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            validation_fraction: 0.1,
            hidden: DEFAULT_HIDDEN.to_vec(),
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::TrainConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::TrainConfig("batch size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::TrainConfig(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::TrainConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean of minibatch losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Training-set MSE of the final head.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Seeded shuffle of `0..n` cut into training and validation rows. The
/// returned generator continues the same stream for epoch shuffles.
fn split_rows(n: usize, cfg: &TrainConfig) -> Result<(ChaCha8Rng, Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = (n as f64 * cfg.validation_fraction).floor() as usize;
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(Error::EmptyDataset);
    }
    let val = order.split_off(n_train);
    Ok((rng, order, val))
}

/// Fits `head` to `(inputs, targets)` in place.
///
/// Rows are split once into training and validation parts by a seeded
/// shuffle; each epoch reshuffles the training rows and visits batches in
/// order, so the result depends only on the data and `cfg`.
pub fn fit<F: Float>(
    head: &mut Mlp<F>,
    inputs: &Array2<F>,
    targets: &Array1<F>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if targets.len() != n {
        return Err(Error::Shape { left: n, right: targets.len() });
    }
    head.check_dim(inputs.ncols())?;

    let (mut rng, mut train_idx, val_idx) = split_rows(n, cfg)?;
    let n_train = train_idx.len();

    let lr: F = cast(cfg.learning_rate);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), batch);
            let t = targets.select(Axis(0), batch);
            let (loss, grads) = head.loss_and_gradients(x.view(), t.view());
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            head.apply_gradients(&grads, lr);
            weighted += loss * batch.len() as f64;
            step += 1;
        }
        epoch_losses.push(weighted / n_train as f64);
    }

    let subset_mse = |idx: &[usize]| -> Result<f64> {
        let x = inputs.select(Axis(0), idx);
        let t = targets.select(Axis(0), idx);
        let v = head.mse(x.view(), t.view()).to_f64().unwrap_or(f64::NAN);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Divergence { step })
        }
    };
    let train_loss = subset_mse(&train_idx)?;
    let validation_loss = if val_idx.is_empty() {
        None
    } else {
        Some(subset_mse(&val_idx)?)
    };
    Ok(TrainReport {
        epoch_losses,
        train_loss,
        validation_loss,
        train_size: n_train,
        validation_size: val_idx.len(),
    })
}

/// Stacks embeddings into an `n x d` matrix, checking they share a dimension.
pub fn stack_embeddings(features: &[EmbeddingVector]) -> Result<Array2<f32>> {
    let d = features.first().map_or(0, EmbeddingVector::dim);
    let mut m = Array2::zeros((features.len(), d));
    for (i, e) in features.iter().enumerate() {
        if e.dim() != d {
            return Err(Error::InputShape {
                expected: format!("dimension {d}"),
                actual: format!("dimension {} at row {i}", e.dim()),
            });
        }
        m.row_mut(i).assign(&ArrayView1::from(e.values()));
    }
    Ok(m)
}

/// Per-column mean and standard deviation over `rows`; columns with no
/// spread keep scale 1.
fn column_stats(x: &Array2<f32>, rows: &[usize]) -> (Array1<f32>, Array1<f32>) {
    let n = rows.len() as f64;
    let d = x.ncols();
    let mut mean = vec![0.0f64; d];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += f64::from(*v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for &r in rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (f64::from(*v) - m).powi(2);
        }
    }
    let scale = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-6 { sd as f32 } else { 1.0 }
        })
        .collect();
    (mean.iter().map(|m| *m as f32).collect(), scale)
}

/// Trains a fresh head on real-valued targets.
///
/// The output layer starts with zero weights and the mean training target as
/// bias. With `cfg.standardize`, features are centred and scaled per column
/// using training rows only, and that map is folded into the first layer of
/// the returned head, which therefore takes raw embeddings.
pub fn train_regression(
    features: &[EmbeddingVector],
    targets: &[f64],
    cfg: &TrainConfig,
) -> Result<(RegressionHead, TrainReport)> {
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if features.len() != targets.len() {
        return Err(Error::Shape { left: features.len(), right: targets.len() });
    }
    cfg.validate()?;
    let mut x = stack_embeddings(features)?;
    let t: Array1<f32> = targets.iter().map(|v| *v as f32).collect();
    let mut widths = vec![x.ncols()];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mut head = RegressionHead::new(&widths, cfg.seed)?;
    let (_, train_idx, _) = split_rows(x.nrows(), cfg)?;
    let mean_target = train_idx.iter().map(|i| f64::from(t[*i])).sum::<f64>() / train_idx.len() as f64;
    let out = head.layers.last_mut().unwrap();
    out.weights.fill(0.0);
    out.bias[0] = mean_target as f32;
    let standardization = cfg.standardize.then(|| {
        let (mean, scale) = column_stats(&x, &train_idx);
        for mut row in x.rows_mut() {
            ndarray::Zip::from(&mut row)
                .and(&mean)
                .and(&scale)
                .for_each(|v, m, s| *v = (*v - m) / s);
        }
        (mean, scale)
    });
    let report = fit(&mut head, &x, &t, cfg)?;
    if let Some((mean, scale)) = standardization {
        head.fold_input_affine(&mean, &scale);
    }
    Ok((head, report))
}

/// Trains a fresh head to regress the numeric severity grade.
pub fn train_head(
    features: &[(EmbeddingVector, SeverityLabel)],
    cfg: &TrainConfig,
) -> Result<(RegressionHead, TrainReport)> {
    let (x, t): (Vec<EmbeddingVector>, Vec<f64>) = features
        .iter()
        .map(|(e, l)| (e.clone(), l.as_f64()))
        .unzip();
    train_regression(&x, &t, cfg)
}
