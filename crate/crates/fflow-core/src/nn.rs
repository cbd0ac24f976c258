//! Minimal feedforward regression network: Adam, MSE, per-layer activation
//! capture and epoch checkpointing.
//!
//! Scalar-output regression only; hidden layers share one activation, the
//! output layer is linear. Everything runs in f64 so the FI path downstream
//! never mixes precisions. Training is sequential over batches (the
//! optimizer state is single-threaded); forward passes on frozen weights
//! are pure and chunk cleanly.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{GridDataset, LabeledData};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;
use crate::stats::SampleMatrix;
use crate::{Matrix, Real, Vector};

/// Rows per chunk when evaluating losses or collecting activations.
const EVAL_CHUNK_ROWS: usize = 8192;
/// Fixed split of a training batch for parallel gradient accumulation. The
/// group count never depends on the worker pool, and group sums are folded
/// in order, so training is bitwise deterministic for any thread count.
const GRAD_GROUPS: usize = 4;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// x for x > 0, α·x otherwise.
    LeakyRelu(Real),
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu(alpha) => crate::embed::nonlinearity(x, T::from_f64(alpha).unwrap()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation value.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64(alpha).unwrap()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
        }
    }
}

/// Architecture description: node counts per layer (input first), hidden
/// activation, and the init seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "layer_sizes",
                value: layer_sizes.len() as f64,
                expected: "at least 2 layers",
            });
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter {
                name: "layer_sizes",
                value: 0.0,
                expected: "all sizes >= 1",
            });
        }
        Ok(Self {
            layer_sizes,
            hidden_activation,
            seed,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// Feedforward network with per-transition weights (out×in) and biases.
#[derive(Debug, Clone)]
pub struct MlpModel {
    spec: MlpSpec,
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
}

/// Fan-in-scaled random initialization: W ~ N(0, 2/fan_in), biases zero.
pub fn init_mlp(spec: &MlpSpec) -> MlpModel {
    let mut weights = Vec::with_capacity(spec.n_layers() - 1);
    let mut biases = Vec::with_capacity(spec.n_layers() - 1);
    for l in 0..spec.n_layers() - 1 {
        let fan_in = spec.layer_sizes[l];
        let fan_out = spec.layer_sizes[l + 1];
        let std = (2.0 / fan_in as Real).sqrt();
        let mut rng = seed::rng(spec.seed, "init", l as u64);
        let entries: Vec<Real> = (0..fan_in * fan_out)
            .map(|_| std * rng.sample::<Real, _>(StandardNormal))
            .collect();
        weights.push(Matrix::from_vec(fan_out, fan_in, entries));
        biases.push(Vector::zeros(fan_out));
    }
    MlpModel {
        spec: spec.clone(),
        weights,
        biases,
    }
}

impl MlpModel {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vector] {
        &mut self.biases
    }

    /// Rebuild a model from snapshotted parameters.
    pub fn from_parameters(spec: MlpSpec, weights: Vec<Matrix>, biases: Vec<Vector>) -> Result<Self> {
        if weights.len() != spec.n_layers() - 1 || biases.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter snapshot vs spec",
                left: weights.len(),
                right: spec.n_layers() - 1,
            });
        }
        for l in 0..weights.len() {
            if weights[l].nrows() != spec.layer_sizes[l + 1]
                || weights[l].ncols() != spec.layer_sizes[l]
                || biases[l].len() != spec.layer_sizes[l + 1]
            {
                return Err(Error::DimensionMismatch {
                    context: "snapshot layer shape",
                    left: weights[l].nrows(),
                    right: spec.layer_sizes[l + 1],
                });
            }
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    /// Number of weight transitions (layers minus one).
    pub fn n_transitions(&self) -> usize {
        self.weights.len()
    }

    /// One layer transition on a batch of rows; hidden layers apply the
    /// activation, the output layer is linear.
    pub fn advance(&self, rows: &Matrix, layer: usize) -> Matrix {
        let mut z = rows * self.weights[layer].transpose();
        let b = &self.biases[layer];
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                z[(i, j)] += b[j];
            }
        }
        if layer < self.weights.len() - 1 {
            for v in z.iter_mut() {
                *v = self.spec.hidden_activation.apply(*v);
            }
        }
        z
    }

    /// Forward pass returning activations and pre-activations of every
    /// transition (training path; batch kept whole).
    fn forward_training(&self, x: &Matrix) -> (Vec<Matrix>, Vec<Matrix>) {
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        let mut preacts = Vec::with_capacity(self.weights.len());
        activations.push(x.clone());
        for l in 0..self.weights.len() {
            let mut z = activations.last().unwrap() * self.weights[l].transpose();
            let b = &self.biases[l];
            for i in 0..z.nrows() {
                for j in 0..z.ncols() {
                    z[(i, j)] += b[j];
                }
            }
            preacts.push(z.clone());
            if l < self.weights.len() - 1 {
                for v in z.iter_mut() {
                    *v = self.spec.hidden_activation.apply(*v);
                }
            }
            activations.push(z);
        }
        (activations, preacts)
    }

    /// Network output for a batch of rows, chunked to bound memory.
    pub fn predict(&self, x: &Matrix) -> Matrix {
        let n = x.nrows();
        let mut out = Matrix::zeros(n, self.spec.output_dim());
        let mut start = 0;
        while start < n {
            let len = EVAL_CHUNK_ROWS.min(n - start);
            let mut cur = x.rows(start, len).into_owned();
            for l in 0..self.weights.len() {
                cur = self.advance(&cur, l);
            }
            out.rows_mut(start, len).copy_from(&cur);
            start += len;
        }
        out
    }

    /// MSE of the scalar network output against labels. Chunks are evaluated
    /// in parallel and their error sums folded in chunk order.
    pub fn loss_on(&self, x: &Matrix, y: &Vector) -> Real {
        debug_assert_eq!(self.spec.output_dim(), 1);
        let n = x.nrows();
        let ranges: Vec<(usize, usize)> = (0..n.div_ceil(EVAL_CHUNK_ROWS))
            .map(|c| {
                let start = c * EVAL_CHUNK_ROWS;
                (start, EVAL_CHUNK_ROWS.min(n - start))
            })
            .collect();
        let sums: Vec<Real> = ranges
            .into_par_iter()
            .map(|(start, len)| {
                let mut cur = x.rows(start, len).into_owned();
                for l in 0..self.weights.len() {
                    cur = self.advance(&cur, l);
                }
                let mut acc = 0.0;
                for i in 0..len {
                    let e = cur[(i, 0)] - y[start + i];
                    acc += e * e;
                }
                acc
            })
            .collect();
        sums.iter().sum::<Real>() / n as Real
    }

    /// Unnormalized gradient sums of Σ (out − y)² over the given rows.
    fn gradient_sums(&self, x: &Matrix, y: &Vector, start: usize, len: usize) -> (Vec<Matrix>, Vec<Vector>) {
        let rows = x.rows(start, len).into_owned();
        let (activations, preacts) = self.forward_training(&rows);
        let out = activations.last().unwrap();
        let mut delta = Matrix::zeros(out.nrows(), out.ncols());
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                delta[(i, j)] = 2.0 * (out[(i, j)] - y[start + i]);
            }
        }
        let mut grads_w = vec![Matrix::zeros(0, 0); self.weights.len()];
        let mut grads_b = vec![Vector::zeros(0); self.weights.len()];
        for l in (0..self.weights.len()).rev() {
            let delta_t = delta.transpose();
            grads_w[l] = &delta_t * &activations[l];
            grads_b[l] = Vector::from_fn(delta.ncols(), |j, _| delta.column(j).sum());
            if l > 0 {
                let mut prev = &delta * &self.weights[l];
                let z = &preacts[l - 1];
                for i in 0..prev.nrows() {
                    for j in 0..prev.ncols() {
                        prev[(i, j)] *= self.spec.hidden_activation.derivative(z[(i, j)]);
                    }
                }
                delta = prev;
            }
        }
        (grads_w, grads_b)
    }

    /// Gradients of the full-batch MSE with respect to every weight matrix
    /// and bias vector (used directly by the finite-difference gate).
    pub fn loss_gradients(&self, x: &Matrix, y: &Vector) -> (Vec<Matrix>, Vec<Vector>) {
        let n = x.nrows();
        let (mut gw, mut gb) = self.gradient_sums(x, y, 0, n);
        let inv_n = 1.0 / n as Real;
        for g in &mut gw {
            *g *= inv_n;
        }
        for g in &mut gb {
            *g *= inv_n;
        }
        (gw, gb)
    }

    /// Batch gradients accumulated over a fixed four-way row split evaluated
    /// in parallel; the group sums are combined in group order.
    fn batch_gradients(&self, x: &Matrix, y: &Vector) -> (Vec<Matrix>, Vec<Vector>) {
        let n = x.nrows();
        let per = n.div_ceil(GRAD_GROUPS);
        let ranges: Vec<(usize, usize)> = (0..GRAD_GROUPS)
            .map(|g| (g * per, per.min(n.saturating_sub(g * per))))
            .filter(|&(_, len)| len > 0)
            .collect();
        let parts: Vec<(Vec<Matrix>, Vec<Vector>)> = ranges
            .into_par_iter()
            .map(|(start, len)| self.gradient_sums(x, y, start, len))
            .collect();
        let inv_n = 1.0 / n as Real;
        let mut iter = parts.into_iter();
        let (mut gw, mut gb) = iter.next().expect("nonempty batch");
        for (pw, pb) in iter {
            for (acc, p) in gw.iter_mut().zip(pw) {
                *acc += p;
            }
            for (acc, p) in gb.iter_mut().zip(pb) {
                *acc += p;
            }
        }
        for g in &mut gw {
            *g *= inv_n;
        }
        for g in &mut gb {
            *g *= inv_n;
        }
        (gw, gb)
    }
}

/// Capture the data representation at every layer: element k is the
/// post-activation output of layer k, with the raw input first and the
/// network output last.
pub fn forward_collect(m: &MlpModel, batch: &SampleMatrix) -> Result<Vec<SampleMatrix>> {
    if batch.d() != m.spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward_collect input width",
            left: batch.d(),
            right: m.spec.input_dim(),
        });
    }
    let mut layers = Vec::with_capacity(m.spec.n_layers());
    layers.push(batch.clone());
    let mut cur = batch.data().clone();
    for l in 0..m.weights.len() {
        cur = m.advance(&cur, l);
        layers.push(SampleMatrix::new(cur.clone())?);
    }
    Ok(layers)
}

/// Mean squared error between two equal-length vectors.
pub fn mse(pred: &Vector, target: &Vector) -> Result<Real> {
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "mse operand lengths",
            left: pred.len(),
            right: target.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..pred.len() {
        let e = pred[i] - target[i];
        acc += e * e;
    }
    Ok(acc / pred.len() as Real)
}

/// Optimizer and schedule parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: Real,
    pub adam_beta2: Real,
    pub adam_eps: Real,
    pub val_fraction: Real,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    /// Conventional Adam defaults: β₁ = 0.9, β₂ = 0.999, ε = 1e-8, 20%
    /// validation split.
    pub fn new(learning_rate: Real, batch_size: usize, epochs: usize, shuffle_seed: u64) -> Self {
        Self {
            learning_rate,
            batch_size,
            epochs,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            val_fraction: 0.2,
            shuffle_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                value: self.learning_rate,
                expected: "> 0",
            });
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size/epochs",
                value: 0.0,
                expected: ">= 1",
            });
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    expected: "in (0, 1)",
                });
            }
        }
        Ok(())
    }
}

/// Snapshot of the model at one epoch. Epoch 0 is the pre-training
/// initialization, captured before any optimizer step.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub epoch: usize,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    pub train_loss: Real,
    pub val_loss: Real,
}

impl Checkpoint {
    /// Rebuild the model frozen at this checkpoint.
    pub fn model(&self) -> Result<MlpModel> {
        MlpModel::from_parameters(self.spec.clone(), self.weights.clone(), self.biases.clone())
    }
}

/// Adam moment buffers, one pair per parameter tensor.
struct AdamState {
    m_w: Vec<Matrix>,
    v_w: Vec<Matrix>,
    m_b: Vec<Vector>,
    v_b: Vec<Vector>,
    step: u64,
}

impl AdamState {
    fn new(model: &MlpModel) -> Self {
        Self {
            m_w: model.weights.iter().map(|w| Matrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: model.weights.iter().map(|w| Matrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: model.biases.iter().map(|b| Vector::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| Vector::zeros(b.len())).collect(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads_w: &[Matrix], grads_b: &[Vector], cfg: &TrainConfig) {
        self.step += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for l in 0..model.weights.len() {
            let (m, v, g, w) = (
                &mut self.m_w[l],
                &mut self.v_w[l],
                &grads_w[l],
                &mut model.weights[l],
            );
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let gij = g[(i, j)];
                    m[(i, j)] = b1 * m[(i, j)] + (1.0 - b1) * gij;
                    v[(i, j)] = b2 * v[(i, j)] + (1.0 - b2) * gij * gij;
                    let m_hat = m[(i, j)] / bc1;
                    let v_hat = v[(i, j)] / bc2;
                    w[(i, j)] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                }
            }
            let (m, v, g, b) = (
                &mut self.m_b[l],
                &mut self.v_b[l],
                &grads_b[l],
                &mut model.biases[l],
            );
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                b[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

fn snapshot(model: &MlpModel, epoch: usize, train: &LabeledData, val: &LabeledData) -> Checkpoint {
    let train_loss = model.loss_on(&train.x, &train.y);
    let val_loss = if val.is_empty() {
        Real::NAN
    } else {
        model.loss_on(&val.x, &val.y)
    };
    Checkpoint {
        spec: model.spec.clone(),
        epoch,
        weights: model.weights.clone(),
        biases: model.biases.clone(),
        train_loss,
        val_loss,
    }
}

/// Minibatch Adam on the MSE loss with a stratified train/validation split
/// and per-epoch seeded shuffling. Checkpoints are captured at the requested
/// epochs; epoch 0 is snapshotted before any update.
pub fn train(
    model: &mut MlpModel,
    data: &GridDataset,
    cfg: &TrainConfig,
    checkpoint_epochs: &[usize],
) -> Result<Vec<Checkpoint>> {
    cfg.validate()?;
    if data.total_samples() == 0 {
        return Err(Error::EmptyDataset);
    }
    if data.d() != model.spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "training data width vs input layer",
            left: data.d(),
            right: model.spec.input_dim(),
        });
    }
    if model.spec.output_dim() != 1 {
        return Err(Error::InvalidParameter {
            name: "output_dim",
            value: model.spec.output_dim() as f64,
            expected: "scalar output for regression on θ",
        });
    }
    if checkpoint_epochs.windows(2).any(|w| w[0] >= w[1]) || checkpoint_epochs.first() != Some(&0) {
        return Err(Error::InvalidParameter {
            name: "checkpoint_epochs",
            value: f64::NAN,
            expected: "strictly increasing and starting at 0",
        });
    }

    let (train_set, val_set) = data.split(cfg.val_fraction, cfg.shuffle_seed)?;
    let n = train_set.len();
    let mut checkpoints = Vec::new();
    let wanted: std::collections::BTreeSet<usize> = checkpoint_epochs.iter().copied().collect();
    if wanted.contains(&0) {
        checkpoints.push(snapshot(model, 0, &train_set, &val_set));
    }

    let mut adam = AdamState::new(model);
    let last_epoch = *checkpoint_epochs.last().unwrap_or(&cfg.epochs);
    let epochs = cfg.epochs.max(last_epoch);
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 1..=epochs {
        let mut rng = seed::rng(cfg.shuffle_seed, "epoch-shuffle", epoch as u64);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        let mut start = 0;
        while start < n {
            let len = cfg.batch_size.min(n - start);
            let batch_idx = &indices[start..start + len];
            let mut x = Matrix::zeros(len, train_set.x.ncols());
            let mut y = Vector::zeros(len);
            for (row, &src) in batch_idx.iter().enumerate() {
                x.row_mut(row).copy_from(&train_set.x.row(src));
                y[row] = train_set.y[src];
            }
            let (grads_w, grads_b) = model.batch_gradients(&x, &y);
            if grads_w.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.update(model, &grads_w, &grads_b, cfg);
            start += len;
        }
        if wanted.contains(&epoch) {
            let ckpt = snapshot(model, epoch, &train_set, &val_set);
            if !ckpt.train_loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            checkpoints.push(ckpt);
        }
    }
    Ok(checkpoints)
}
