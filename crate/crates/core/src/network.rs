//! Fully-connected ReLU classifier with hand-written backpropagation.
//!
//! The network computes `W_k(…(W_1 x + b_1)_+ …)_+ + b_k` with no activation
//! after the last layer. Inside a region of constant ReLU sign pattern it is
//! affine, `f(x) = P_Sᵀ x + q`, so every input gradient of the loss is a
//! combination of the columns of `P_S` (see [`region_matrix`]).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::container::{Container, Entry};
use crate::data::LabeledDataset;
use crate::linalg::argmax;
use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.5,
            epochs: 50,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Per-layer signs (−1, 0, +1) of the hidden pre-activations.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignPattern(pub Vec<Vec<i8>>);

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: MlpParams,
    pub history: Vec<EpochStats>,
}

impl MlpParams {
    /// He-style initialization (`N(0, 2 / fan_in)` weights, zero biases).
    ///
    /// `widths` lists every layer width including input and output.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid("need at least input and output widths, all positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let mut w = DMatrix::zeros(fan_out, fan_in);
            for j in 0..fan_in {
                for i in 0..fan_out {
                    w[(i, j)] = normal.sample(&mut rng);
                }
            }
            weights.push(w);
            biases.push(DVector::zeros(fan_out));
        }
        let p = Self { weights, biases };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::invalid("layer weight/bias counts disagree"));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.nrows() != b.len() {
                return Err(Error::invalid(format!("layer {l}: bias length mismatch")));
            }
            if l > 0 && self.weights[l - 1].nrows() != w.ncols() {
                return Err(Error::invalid(format!("layer {l}: input width mismatch")));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l}: non-finite parameter")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn class_count(&self) -> usize {
        self.weights.last().map(|w| w.nrows()).unwrap_or(0)
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has dimension {} but the network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer (the last entry is the logits).
    fn pre_activations(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut zs = Vec::with_capacity(self.layer_count());
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w * &a + b;
            if l + 1 < self.layer_count() {
                a = z.map(|v| v.max(0.0));
            }
            zs.push(z);
        }
        zs
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        Ok(self.pre_activations(x).pop().expect("at least one layer"))
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<usize> {
        let logits = self.forward(x)?;
        Ok(argmax(logits.as_slice()).unwrap_or(0))
    }

    /// Softmax cross-entropy of the logits at label `y`.
    pub fn loss(&self, x: &DVector<f64>, y: usize) -> Result<f64> {
        self.check_label(y)?;
        let logits = self.forward(x)?;
        Ok(cross_entropy(&logits, y))
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.class_count() {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                self.class_count()
            )));
        }
        Ok(())
    }

    /// Gradient of the cross-entropy loss with respect to the input.
    ///
    /// The ReLU derivative at exactly zero is taken as zero.
    pub fn loss_grad_input(&self, x: &DVector<f64>, y: usize) -> Result<DVector<f64>> {
        self.check_input(x)?;
        self.check_label(y)?;
        let zs = self.pre_activations(x);
        let mut grad = softmax(zs.last().expect("at least one layer"));
        grad[y] -= 1.0;
        for l in (0..self.layer_count()).rev() {
            let mut back = self.weights[l].tr_mul(&grad);
            if l > 0 {
                for (g, z) in back.iter_mut().zip(zs[l - 1].iter()) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            grad = back;
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite input gradient".into()));
        }
        Ok(grad)
    }

    pub fn sign_pattern(&self, x: &DVector<f64>) -> Result<SignPattern> {
        self.check_input(x)?;
        let zs = self.pre_activations(x);
        Ok(SignPattern(
            zs[..zs.len() - 1]
                .iter()
                .map(|z| z.iter().map(|&v| sign_i8(v)).collect())
                .collect(),
        ))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("mlp");
        c.push("layers", Entry::Indices(vec![self.layer_count() as u64]));
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            c.push(format!("W{l}"), Entry::Matrix(w.clone()));
            c.push(format!("b{l}"), Entry::Matrix(DMatrix::from_column_slice(b.len(), 1, b.as_slice())));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("mlp")?;
        let layers = *c
            .indices("layers")?
            .first()
            .ok_or_else(|| Error::invalid("missing layer count"))? as usize;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            weights.push(c.matrix(&format!("W{l}"))?.clone());
            let b = c.matrix(&format!("b{l}"))?;
            biases.push(DVector::from_column_slice(b.as_slice()));
        }
        let p = Self { weights, biases };
        p.validate()?;
        Ok(p)
    }
}

fn sign_i8(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let m = logits.max();
    let e = logits.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Log-sum-exp stabilized cross-entropy.
pub fn cross_entropy(logits: &DVector<f64>, y: usize) -> f64 {
    let m = logits.max();
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[y]
}

/// The matrix `P_S` (input dim × classes) for the region with the given
/// sign pattern: `P_Sᵀ = W_k M_{k−1} W_{k−1} ⋯ M_1 W_1`, where `M_l` keeps
/// the rows with positive sign.
pub fn region_matrix(params: &MlpParams, pattern: &SignPattern) -> Result<DMatrix<f64>> {
    let k = params.layer_count();
    if pattern.0.len() + 1 != k {
        return Err(Error::invalid("sign pattern does not match the layer count"));
    }
    let mut prod = params.weights[0].clone();
    for l in 1..k {
        let signs = &pattern.0[l - 1];
        if signs.len() != prod.nrows() {
            return Err(Error::invalid(format!("sign pattern layer {} has wrong width", l - 1)));
        }
        for (i, &s) in signs.iter().enumerate() {
            if s <= 0 {
                prod.row_mut(i).fill(0.0);
            }
        }
        prod = &params.weights[l] * prod;
    }
    Ok(prod.transpose())
}

/// Minibatch SGD with momentum on the mean cross-entropy.
///
/// `hidden` lists the hidden-layer widths; input and output widths come from
/// the dataset. The velocity update is `v ← μ v + ∇`, `θ ← θ − η v`.
pub fn train_sgd(dataset: &LabeledDataset, hidden: &[usize], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut widths = vec![dataset.dim()];
    widths.extend_from_slice(hidden);
    widths.push(dataset.class_count);
    let mut params = MlpParams::init(&widths, config.seed)?;
    let mut vel_w: Vec<DMatrix<f64>> = params.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
    let mut vel_b: Vec<DVector<f64>> = params.biases.iter().map(|b| DVector::zeros(b.len())).collect();

    let mut rng = rng_from_seed(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let k = params.layer_count();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bsz = batch.len();
            let x = DMatrix::from_fn(dataset.dim(), bsz, |i, j| dataset.features[(i, batch[j])]);
            // Forward pass, keeping activations.
            let mut acts = vec![x];
            let mut zs = Vec::with_capacity(k);
            for l in 0..k {
                let mut z = &params.weights[l] * &acts[l];
                for mut col in z.column_iter_mut() {
                    col += &params.biases[l];
                }
                if l + 1 < k {
                    acts.push(z.map(|v| v.max(0.0)));
                }
                zs.push(z);
            }
            // Softmax cross-entropy gradient on the logits, averaged.
            let logits = zs.last().unwrap();
            let mut delta = DMatrix::zeros(logits.nrows(), bsz);
            for j in 0..bsz {
                let col = logits.column(j).into_owned();
                let y = dataset.labels[batch[j]];
                loss_sum += cross_entropy(&col, y);
                let mut p = softmax(&col);
                p[y] -= 1.0;
                delta.set_column(j, &(p / bsz as f64));
            }
            for l in (0..k).rev() {
                let grad_w = &delta * acts[l].transpose();
                let grad_b = delta.column_sum();
                if l > 0 {
                    let mut back = params.weights[l].tr_mul(&delta);
                    for (g, z) in back.iter_mut().zip(zs[l - 1].iter()) {
                        if *z <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    delta = back;
                }
                vel_w[l] *= config.momentum;
                vel_w[l] += grad_w;
                vel_b[l] *= config.momentum;
                vel_b[l] += grad_b;
                params.weights[l] -= &vel_w[l] * config.learning_rate;
                params.biases[l] -= &vel_b[l] * config.learning_rate;
            }
        }
        let loss = loss_sum / dataset.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(EpochStats {
            epoch,
            loss,
            accuracy: accuracy(&params, dataset)?,
        });
    }
    Ok(Trained { params, history })
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy(params: &MlpParams, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for j in 0..dataset.len() {
        if params.predict(&dataset.sample(j))? == dataset.labels[j] {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
