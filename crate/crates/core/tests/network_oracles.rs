mod common;

use common::{blobs, gaussian, random_net};
use nalgebra::{DMatrix, DVector};
use sbsr::linalg::{orthonormal_span, projection_residual};
use sbsr::network::{region_matrix, softmax, train_sgd, MlpParams, TrainConfig};
use sbsr::rng_from_seed;

/// Straight-line recomputation of the forward pass with plain loops.
fn forward_oracle(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let k = p.weights.len();
    for l in 0..k {
        let w = &p.weights[l];
        let mut z = vec![0.0; w.nrows()];
        for i in 0..w.nrows() {
            let mut acc = p.biases[l][i];
            for j in 0..w.ncols() {
                acc += w[(i, j)] * a[j];
            }
            z[i] = if l + 1 < k { acc.max(0.0) } else { acc };
        }
        a = z;
    }
    a
}

#[test]
fn forward_matches_loop_oracle() {
    for seed in 0..10 {
        let p = random_net(&[7, 9, 6, 4], seed);
        let x = gaussian(7, &mut rng_from_seed(seed + 100));
        let got = p.forward(&x).unwrap();
        let want = forward_oracle(&p, x.as_slice());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

fn same_region(p: &MlpParams, a: &DVector<f64>, b: &DVector<f64>) -> bool {
    p.sign_pattern(a).unwrap() == p.sign_pattern(b).unwrap()
}

#[test]
fn input_gradient_matches_central_differences() {
    let h = 1e-5;
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 50 {
        seed += 1;
        let p = random_net(&[6, 10, 8, 5], seed);
        let mut rng = rng_from_seed(seed * 31);
        let x = gaussian(6, &mut rng);
        let y = (seed % 5) as usize;
        let probes: Vec<(DVector<f64>, DVector<f64>)> = (0..6)
            .map(|i| {
                let mut e = DVector::zeros(6);
                e[i] = h;
                (&x + &e, &x - &e)
            })
            .collect();
        // Central differences are only meaningful inside one linear region.
        if !probes.iter().all(|(a, b)| same_region(&p, a, &x) && same_region(&p, b, &x)) {
            continue;
        }
        let g = p.loss_grad_input(&x, y).unwrap();
        let fd: Vec<f64> = probes
            .iter()
            .map(|(a, b)| (p.loss(a, y).unwrap() - p.loss(b, y).unwrap()) / (2.0 * h))
            .collect();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        assert!(err < 1e-5, "seed {seed}: relative error {err}");
        checked += 1;
    }
}

#[test]
fn linear_layer_gradient_closed_form() {
    let p = random_net(&[5, 3], 4);
    let x = gaussian(5, &mut rng_from_seed(8));
    let mut onehot = DVector::zeros(3);
    onehot[2] = 1.0;
    let want = p.weights[0].tr_mul(&(softmax(&(&p.weights[0] * &x + &p.biases[0])) - onehot));
    assert!((p.loss_grad_input(&x, 2).unwrap() - want).amax() < 1e-14);
}

#[test]
fn dead_first_layer_has_zero_gradient() {
    let mut p = random_net(&[4, 5, 3], 2);
    p.biases[0] = DVector::from_element(5, -100.0);
    let x = DVector::from_element(4, 0.1);
    assert_eq!(p.loss_grad_input(&x, 1).unwrap(), DVector::zeros(4));
}

#[test]
fn region_gradients_live_in_region_matrix_span() {
    let p = random_net(&[8, 12, 10, 4], 11);
    let mut rng = rng_from_seed(5);
    let x = gaussian(8, &mut rng);
    let pattern = p.sign_pattern(&x).unwrap();
    let ps = region_matrix(&p, &pattern).unwrap();
    let basis = orthonormal_span(&ps);
    let mut grads = Vec::new();
    while grads.len() < 6 {
        let xp = &x + gaussian(8, &mut rng) * 1e-3;
        if p.sign_pattern(&xp).unwrap() != pattern {
            continue;
        }
        let y = grads.len() % 4;
        let g = p.loss_grad_input(&xp, y).unwrap();
        // Chain rule inside the region: g = P_S (softmax(z) − e_y).
        let mut dz = softmax(&p.forward(&xp).unwrap());
        dz[y] -= 1.0;
        assert!((&g - &ps * dz).amax() < 1e-9);
        assert!(projection_residual(&basis, &g) < 1e-9);
        grads.push(g);
    }
    let stacked = DMatrix::from_columns(&grads);
    let joint = orthonormal_span(&DMatrix::from_columns(
        &ps.column_iter().map(|c| c.into_owned()).chain(stacked.column_iter().map(|c| c.into_owned())).collect::<Vec<_>>(),
    ));
    assert_eq!(joint.ncols(), basis.ncols());
}

#[test]
fn forward_is_affine_on_constant_pattern_segments() {
    let p = random_net(&[6, 8, 8, 3], 21);
    let mut rng = rng_from_seed(3);
    let mut tested = 0;
    while tested < 20 {
        let x = gaussian(6, &mut rng);
        let xp = &x + gaussian(6, &mut rng) * 0.01;
        let pattern = p.sign_pattern(&x).unwrap();
        let ts: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        if !ts.iter().all(|&t| p.sign_pattern(&(&x * t + &xp * (1.0 - t))).unwrap() == pattern) {
            continue;
        }
        let (fx, fxp) = (p.forward(&x).unwrap(), p.forward(&xp).unwrap());
        for &t in &ts {
            let mid = p.forward(&(&x * t + &xp * (1.0 - t))).unwrap();
            assert!((mid - (&fx * t + &fxp * (1.0 - t))).amax() < 1e-9);
        }
        tested += 1;
    }
}

#[test]
fn sgd_separates_two_blobs() {
    let data = blobs(4, 2, 100, 0.3, 12);
    let cfg = TrainConfig { epochs: 20, batch_size: 16, seed: 1, ..TrainConfig::default() };
    let trained = train_sgd(&data, &[16], &cfg).unwrap();
    assert!(trained.history.last().unwrap().accuracy >= 0.99);
    assert_eq!(trained.history.len(), 20);
    let again = train_sgd(&data, &[16], &cfg).unwrap();
    assert_eq!(trained.params, again.params);
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let data = blobs(4, 2, 20, 0.3, 1);
    let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 8, seed: 6, ..TrainConfig::default() };
    let trained = train_sgd(&data, &[5], &cfg).unwrap();
    assert_eq!(trained.params, MlpParams::init(&[4, 5, 2], 6).unwrap());
}
