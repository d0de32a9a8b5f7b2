mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use common::gaussian;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sbsr::data::SubspaceAttackModel;
use sbsr::dictionary::{build_model_dicts, BlockDictionary, BlockLabel};
use sbsr::geometry::{angular_distance, circumradius_polar, covering_radius, prc_check, min_norm_check};
use sbsr::linalg::{gaussian_matrix, random_orthonormal_frame};
use sbsr::rng_from_seed;
use sbsr::solver::{solve_constrained, SolverConfig};

fn single_block(m: &DMatrix<f64>) -> BlockDictionary {
    BlockDictionary::from_blocks(m.nrows(), vec![(BlockLabel::Class(0), m.clone())], true).unwrap()
}

#[test]
fn orthonormal_block_closed_forms() {
    for (k, &m) in [2usize, 4, 8].iter().enumerate() {
        let frame = random_orthonormal_frame(12, &mut rng_from_seed(k as u64));
        let d = single_block(&frame.columns(0, m).into_owned());
        let gamma = covering_radius(&d, 100_000, 3).unwrap();
        let want = (1.0 / (m as f64).sqrt()).acos();
        assert!((gamma - want).abs() < 0.02, "m {m}: {gamma} vs {want}");
        let r = circumradius_polar(&d, 100_000, 4).unwrap();
        assert!((r / (m as f64).sqrt() - 1.0).abs() < 0.02, "m {m}: R {r}");
    }
}

/// `min_θ max_b ‖D_bᵀ(cos θ·q₁ + sin θ·q₂)‖/√m_b` for a dictionary whose
/// columns all lie in the plane spanned by `q₁, q₂`: a dense angle grid, then
/// a second dense grid around the best coarse angle.
fn planar_min_correlation(d: &DMatrix<f64>, widths: &[usize], q: &DMatrix<f64>) -> f64 {
    let f = |t: f64| {
        let v = q.column(0) * t.cos() + q.column(1) * t.sin();
        let mut at = 0;
        let mut f = 0.0f64;
        for &w in widths {
            f = f.max((d.columns(at, w).tr_mul(&v)).norm() / (w as f64).sqrt());
            at += w;
        }
        f
    };
    let grid = |lo: f64, hi: f64, steps: usize| {
        (0..=steps)
            .map(|s| lo + (hi - lo) * s as f64 / steps as f64)
            .map(|t| (f(t), t))
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
    };
    let h = PI / 50_000.0;
    let (_, t0) = grid(0.0, PI, 50_000);
    grid(t0 - 2.0 * h, t0 + 2.0 * h, 50_000).0
}

#[test]
fn planar_dictionaries_match_grid_oracle() {
    for seed in 0..5 {
        let mut rng = rng_from_seed(100 + seed);
        let q = random_orthonormal_frame(9, &mut rng).columns(0, 2).into_owned();
        let widths = [2usize, 3];
        let raw = &q * gaussian_matrix(2, 5, &mut rng);
        let d = BlockDictionary::from_blocks(
            9,
            vec![
                (BlockLabel::Class(0), raw.columns(0, 2).into_owned()),
                (BlockLabel::Class(1), raw.columns(2, 3).into_owned()),
            ],
            true,
        )
        .unwrap();
        let oracle = planar_min_correlation(d.atoms(), &widths, &q);
        let gamma = covering_radius(&d, 2_000, seed).unwrap();
        assert!((gamma - oracle.acos()).abs() < 1e-6, "seed {seed}: {gamma} vs {}", oracle.acos());
        let r = circumradius_polar(&d, 2_000, seed).unwrap();
        assert!((r - 1.0 / oracle).abs() < 1e-6 * r);
    }
}

fn random_dictionary(seed: u64) -> BlockDictionary {
    let mut rng = rng_from_seed(seed);
    let n = 4 + (seed as usize % 17);
    let blocks = 1 + (seed as usize % 4);
    let m = 1 + (seed as usize / 3) % 3;
    let raw = (0..blocks).map(|b| (BlockLabel::Class(b), gaussian_matrix(n, m, &mut rng))).collect();
    BlockDictionary::from_blocks(n, raw, true).unwrap()
}

#[test]
fn covering_circumradius_gap_is_small_on_random_dictionaries() {
    for seed in 0..20 {
        let d = random_dictionary(seed);
        let gamma = covering_radius(&d, 100_000, seed).unwrap();
        let r = circumradius_polar(&d, 100_000, seed + 1).unwrap();
        let gap = (gamma.cos() * r - 1.0).abs();
        assert!(gap < 0.05, "seed {seed}: gap {gap}");
    }
}

#[test]
fn covering_radius_grows_with_nested_samples() {
    for seed in 0..6 {
        let d = random_dictionary(seed + 40);
        let mut last = 0.0;
        for samples in [1, 10, 100, 1_000] {
            let g = covering_radius(&d, samples, seed).unwrap();
            assert!(g >= last && g <= FRAC_PI_2, "seed {seed} samples {samples}: {g} < {last}");
            last = g;
        }
    }
}

fn orthogonal_dicts(seed: u64) -> (BlockDictionary, BlockDictionary) {
    let model = SubspaceAttackModel::orthogonal(40, 3, 2, 3, seed).unwrap();
    build_model_dicts(&model, 6, seed + 1).unwrap()
}

#[test]
fn orthogonal_construction_has_positive_margin() {
    let (d_s, d_a) = orthogonal_dicts(1);
    for i in 0..3 {
        for j in 0..2 {
            let rep = prc_check(&d_s, &d_a, i, j, 2_000, 9).unwrap();
            assert!(rep.prc_margin > 0.0, "({i},{j}) margin {}", rep.prc_margin);
            assert!((rep.theta_min - FRAC_PI_2).abs() < 1e-9);
            assert!(!rep.complement_empty);
        }
    }
}

#[test]
fn shared_atom_forces_negative_margin() {
    let (d_s, d_a) = orthogonal_dicts(2);
    let atom = d_s.view(d_s.find(BlockLabel::Class(0)).unwrap()).column(0).into_owned();
    let wrong = d_s.find(BlockLabel::Class(1)).unwrap();
    let corrupted = d_s.with_extra_column(wrong, &atom).unwrap();
    let rep = prc_check(&corrupted, &d_a, 0, 0, 2_000, 3).unwrap();
    assert!(rep.prc_margin < 0.0, "margin {}", rep.prc_margin);
    // The shared atom alone gives correlation 1/√7 with the widened block.
    assert!(rep.theta_min <= (1.0 / 7f64.sqrt()).acos() + 1e-9, "theta {}", rep.theta_min);
}

#[test]
fn reports_are_deterministic_per_seed() {
    let (d_s, d_a) = orthogonal_dicts(5);
    let a = prc_check(&d_s, &d_a, 1, 1, 500, 17).unwrap();
    let b = prc_check(&d_s, &d_a, 1, 1, 500, 17).unwrap();
    assert_eq!(a.csv_row(), b.csv_row());
    assert_eq!(a.to_key_value(), b.to_key_value());
}

/// Signal and attack blocks spanning random (non-orthogonal) subspaces.
fn random_subspace_dicts(n: usize, d: usize, atoms: usize, seed: u64) -> (BlockDictionary, BlockDictionary) {
    let mut rng = rng_from_seed(seed);
    let sample = |rng: &mut sbsr::Rng| {
        let basis = random_orthonormal_frame(n, rng).columns(0, d).into_owned();
        &basis * gaussian_matrix(d, atoms, rng)
    };
    let s = (0..3).map(|i| (BlockLabel::Class(i), sample(&mut rng))).collect();
    let mut a = Vec::new();
    for class in 0..3 {
        for attack in 0..2 {
            a.push((BlockLabel::Attack { class, attack }, sample(&mut rng)));
        }
    }
    (BlockDictionary::from_blocks(n, s, true).unwrap(), BlockDictionary::from_blocks(n, a, true).unwrap())
}

/// Support of a constrained solution is exactly the target pair when every
/// other block norm is below `1e-4` of the largest.
fn recovers_target(d_s: &BlockDictionary, d_a: &BlockDictionary, x: &DVector<f64>, i: usize, j: usize) -> bool {
    let sol = solve_constrained(d_s, d_a, x, &SolverConfig::default()).unwrap();
    let ns = sol.signal_block_norms(d_s);
    let na = sol.attack_block_norms(d_a);
    let lead = ns.iter().chain(&na).cloned().fold(0.0, f64::max);
    let s = d_s.find(BlockLabel::Class(i)).unwrap();
    let a = d_a.find(BlockLabel::Attack { class: i, attack: j }).unwrap();
    let others_small = ns.iter().enumerate().filter(|&(b, _)| b != s).all(|(_, &v)| v < 1e-4 * lead)
        && na.iter().enumerate().filter(|&(b, _)| b != a).all(|(_, &v)| v < 1e-4 * lead);
    others_small && ns[s] >= 1e-4 * lead && na[a] >= 1e-4 * lead
}

#[test]
fn positive_margin_implies_recovery() {
    let mut certified = 0;
    for seed in 0..12 {
        let (d_s, d_a) = random_subspace_dicts(100, 2, 6, seed);
        let (i, j) = ((seed % 3) as usize, (seed % 2) as usize);
        let rep = prc_check(&d_s, &d_a, i, j, 5_000, seed).unwrap();
        if rep.prc_margin <= 0.05 {
            continue;
        }
        certified += 1;
        let mut rng = rng_from_seed(seed + 900);
        let s = d_s.view(d_s.find(BlockLabel::Class(i)).unwrap()).into_owned();
        let a = d_a.view(d_a.find(BlockLabel::Attack { class: i, attack: j }).unwrap()).into_owned();
        for _ in 0..5 {
            let x = &s * gaussian(s.ncols(), &mut rng) + &a * gaussian(a.ncols(), &mut rng);
            assert!(recovers_target(&d_s, &d_a, &x, i, j), "seed {seed} margin {}", rep.prc_margin);
        }
    }
    assert!(certified >= 3, "only {certified} certified instances");
}

#[test]
fn recovery_implies_min_norm_inequality() {
    let cfg = SolverConfig::default();
    let (mut recovered, mut holds) = (0, 0);
    for seed in 0..100u64 {
        let n = 8 + (seed as usize % 5) * 4;
        let (d_s, d_a) = random_subspace_dicts(n, 2, 2, seed);
        let (i, j) = ((seed % 3) as usize, ((seed / 3) % 2) as usize);
        let mut rng = rng_from_seed(seed + 7);
        let s = d_s.view(d_s.find(BlockLabel::Class(i)).unwrap()).into_owned();
        let a = d_a.view(d_a.find(BlockLabel::Attack { class: i, attack: j }).unwrap()).into_owned();
        let x = &s * gaussian(2, &mut rng) + &a * gaussian(2, &mut rng);
        let out = min_norm_check(&d_s, &d_a, &x, i, j, &cfg).unwrap();
        holds += out.holds as usize;
        if recovers_target(&d_s, &d_a, &x, i, j) {
            recovered += 1;
            // The full optimum equals the target-only minimum, and any
            // complement representation is feasible for the full problem.
            assert!(out.holds, "seed {seed}: recovered but lhs {} rhs {}", out.lhs, out.rhs);
        }
    }
    assert!(recovered >= 20 && recovered < 100, "recovered {recovered}");
    assert!(holds >= recovered);
}

/// Minimum ℓ2-norm coefficients for `x = U·G·c` with `U` orthonormal and `G`
/// of full row rank: `c = Gᵀ(GGᵀ)⁻¹Uᵀx`.
fn min_norm_in_subspace(u: &DMatrix<f64>, block: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let g = u.tr_mul(block);
    let gram = &g * g.transpose();
    (g.transpose() * gram.try_inverse().unwrap() * u.tr_mul(x)).norm()
}

#[test]
fn single_atom_min_norm_matches_closed_form() {
    let model = SubspaceAttackModel::orthogonal(40, 3, 2, 3, 3).unwrap();
    let (d_s, d_a) = build_model_dicts(&model, 6, 4).unwrap();
    let block = d_s.view(d_s.find(BlockLabel::Class(2)).unwrap()).into_owned();
    let x = block.column(1).into_owned();
    let out = min_norm_check(&d_s, &d_a, &x, 2, 1, &SolverConfig::default()).unwrap();
    let want = min_norm_in_subspace(&model.signal_bases[2], &block, &x);
    assert!(want < 1.0);
    assert!((out.lhs - want).abs() < 1e-5, "lhs {} oracle {want}", out.lhs);
    assert!(out.wrong_class_infeasible && out.holds && out.rhs.is_infinite());

    // A block with a single atom represents that atom with norm exactly 1.
    let single = BlockDictionary::from_blocks(40, vec![(BlockLabel::Class(0), block.columns(1, 1).into_owned())], true).unwrap();
    let one = min_norm_check(&single, &d_a.subset(&[0]), &x, 0, 0, &SolverConfig::default()).unwrap();
    assert!((one.lhs - 1.0).abs() < 1e-6, "lhs {}", one.lhs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn angular_distance_invariances(seed in any::<u64>(), t in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], flips in any::<u16>()) {
        let mut rng = rng_from_seed(seed);
        let raw = gaussian_matrix(7, 6, &mut rng);
        let blocks = |m: &DMatrix<f64>| vec![
            (BlockLabel::Class(0), m.columns(0, 2).into_owned()),
            (BlockLabel::Class(1), m.columns(2, 4).into_owned()),
        ];
        let d = BlockDictionary::from_blocks(7, blocks(&raw), true).unwrap();
        let mut flipped = raw.clone();
        for c in 0..6 {
            if flips >> c & 1 == 1 {
                flipped.column_mut(c).neg_mut();
            }
        }
        let df = BlockDictionary::from_blocks(7, blocks(&flipped), true).unwrap();
        let v = gaussian(7, &mut rng);
        let base = angular_distance(&v, &d).unwrap();
        prop_assert!((0.0..=FRAC_PI_2).contains(&base));
        prop_assert!((angular_distance(&(&v * t), &d).unwrap() - base).abs() < 1e-9);
        prop_assert!((angular_distance(&v, &df).unwrap() - base).abs() < 1e-12);
    }
}


