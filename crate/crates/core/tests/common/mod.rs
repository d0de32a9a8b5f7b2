#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sbsr::data::LabeledDataset;
use sbsr::network::{train_sgd, MlpParams, TrainConfig};
use sbsr::{rng_from_seed, Rng};

/// Gaussian clusters around well-separated random centers.
pub fn blobs(dim: usize, classes: usize, per_class: usize, spread: f64, seed: u64) -> LabeledDataset {
    let mut rng = rng_from_seed(seed);
    let centers: Vec<DVector<f64>> = (0..classes).map(|_| gaussian(dim, &mut rng) * 2.0).collect();
    let mut features = DMatrix::zeros(dim, classes * per_class);
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for s in 0..per_class {
            let x = center + gaussian(dim, &mut rng) * spread;
            features.set_column(c * per_class + s, &x);
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, classes).unwrap()
}

pub fn gaussian(len: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

pub fn uniform(len: usize, lo: f64, hi: f64, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| lo + (hi - lo) * rng.random::<f64>())
}

pub fn random_net(widths: &[usize], seed: u64) -> MlpParams {
    let mut p = MlpParams::init(widths, seed).unwrap();
    let mut rng = rng_from_seed(seed ^ 0xb1a5);
    for b in p.biases.iter_mut() {
        *b = gaussian(b.len(), &mut rng) * 0.1;
    }
    p
}

pub fn trained_blob_net(seed: u64) -> (MlpParams, LabeledDataset) {
    let data = blobs(8, 3, 100, 0.5, seed);
    let cfg = TrainConfig { epochs: 30, batch_size: 16, seed, ..TrainConfig::default() };
    let trained = train_sgd(&data, &[32, 32], &cfg).unwrap();
    (trained.params, data)
}
