//! Monte-Carlo evaluation of recovery geometry.
//!
//! For a block dictionary `D` and a unit vector `v`, the block correlation is
//! `f(v) = max_b ‖D_bᵀv‖₂ / √m_b` and the angular distance is `arccos f(v)`.
//! The covering radius is the largest angular distance over the unit sphere
//! of `span(D)`, and the circumradius of the polar set is `1 / min f` over the
//! same sphere, so `cos(γ)·R = 1`.
//!
//! Sup and inf over spheres are estimated by isotropic sampling in an
//! orthonormal basis of the span, followed by a pattern-search refinement
//! from every sample that improved on all earlier ones. Covering radii and
//! circumradii are therefore biased low, distances to a complement biased
//! high. Refining every record keeps the estimate monotone in the sample
//! count for a fixed seed.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::dictionary::{BlockDictionary, BlockLabel};
use crate::linalg::{orthonormal_span, unit_sphere_sample};
use crate::solver::{solve_constrained, SolverConfig};
use crate::{rng_from_seed, Error, Result, Rng};

/// Correlation structure of a set of blocks, seen from the coordinates of an
/// orthonormal basis `U`: `M_b = D_bᵀU`.
struct Correlator {
    projected: Vec<DMatrix<f64>>,
    inv_sqrt_width: Vec<f64>,
}

impl Correlator {
    fn new(blocks: &[DMatrix<f64>], basis: &DMatrix<f64>) -> Self {
        Self {
            projected: blocks.iter().map(|b| b.tr_mul(basis)).collect(),
            inv_sqrt_width: blocks.iter().map(|b| 1.0 / (b.ncols() as f64).sqrt()).collect(),
        }
    }

    fn dim(&self) -> usize {
        self.projected.first().map_or(0, |m| m.ncols())
    }

    /// `max_b ‖M_b z‖ / √m_b` for a unit coordinate vector `z`.
    fn eval(&self, z: &DVector<f64>) -> f64 {
        self.projected
            .iter()
            .zip(&self.inv_sqrt_width)
            .map(|(m, s)| (m * z).norm() * s)
            .fold(0.0, f64::max)
    }

    /// Smoothed correlation `(Σ_b (‖M_b z‖/√m_b)^p)^{1/p}` and its gradient.
    fn smoothed(&self, z: &DVector<f64>, p: f64) -> (f64, DVector<f64>) {
        let products: Vec<DVector<f64>> = self.projected.iter().map(|m| m * z).collect();
        let values: Vec<f64> = products.iter().zip(&self.inv_sqrt_width).map(|(v, s)| v.norm() * s).collect();
        let top = values.iter().cloned().fold(0.0, f64::max);
        let mut grad = DVector::zeros(z.len());
        if top == 0.0 {
            return (0.0, grad);
        }
        let h = top * values.iter().map(|v| (v / top).powf(p)).sum::<f64>().powf(1.0 / p);
        for (b, v) in values.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let s = self.inv_sqrt_width[b];
            let weight = (v / h).powf(p - 1.0) * s * s / v;
            grad += self.projected[b].tr_mul(&products[b]) * weight;
        }
        (h, grad)
    }
}

fn blocks_of(d: &BlockDictionary) -> Vec<DMatrix<f64>> {
    (0..d.block_count()).map(|b| d.view(b).into_owned()).collect()
}

fn stack(blocks: &[DMatrix<f64>], dim: usize) -> DMatrix<f64> {
    let width = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(dim, width);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

fn unequal_widths(blocks: &[DMatrix<f64>]) -> bool {
    blocks.windows(2).any(|w| w[0].ncols() != w[1].ncols())
}

/// Result of a sphere search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereEstimate {
    /// Best value of the searched function (`f` minimized or maximized).
    pub value: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Goal {
    Minimize,
    Maximize,
}

const REFINE_START_STEP: f64 = 0.25;
const REFINE_MIN_STEP: f64 = 1e-9;
const REFINE_MAX_EVALS: usize = 20_000;

/// Smoothing exponents for the gradient stage of the refinement.
const SMOOTHING_POWERS: [f64; 5] = [8.0, 32.0, 128.0, 512.0, 2048.0];
const SMOOTH_MAX_STEPS: usize = 100;

/// Optimizes the block correlation over the unit sphere in its coordinates.
fn sphere_search(corr: &Correlator, goal: Goal, samples: usize, seed: u64) -> SphereEstimate {
    let k = corr.dim();
    let h = |z: &DVector<f64>| corr.eval(z);
    let better = |a: f64, b: f64| match goal {
        Goal::Minimize => a < b,
        Goal::Maximize => a > b,
    };
    let mut rng = rng_from_seed(seed);
    let mut records: Vec<DVector<f64>> = Vec::new();
    let mut record_value = match goal {
        Goal::Minimize => f64::INFINITY,
        Goal::Maximize => f64::NEG_INFINITY,
    };
    for _ in 0..samples {
        let z = unit_sphere_sample(k, &mut rng);
        let val = h(&z);
        if better(val, record_value) {
            record_value = val;
            records.push(z);
        }
    }
    let mut best = record_value;
    for (r, z) in records.into_iter().enumerate() {
        let smoothed = smooth_descent(corr, z.clone(), goal);
        let start = if better(h(&smoothed), h(&z)) { smoothed } else { z };
        let mut local = rng_from_seed(seed ^ (0x7e51_ba5e_0000_0000 | r as u64));
        let val = refine(k, &h, start, &better, &mut local);
        if better(val, best) {
            best = val;
        }
    }
    SphereEstimate { value: best, samples }
}

/// Riemannian gradient steps on the p-norm smoothing of the block maximum,
/// with p increased in stages. Handles the kinks where pattern search stalls.
fn smooth_descent(corr: &Correlator, mut z: DVector<f64>, goal: Goal) -> DVector<f64> {
    let sign = if goal == Goal::Minimize { 1.0 } else { -1.0 };
    for &p in &SMOOTHING_POWERS {
        let mut step: f64 = 0.1;
        for _ in 0..SMOOTH_MAX_STEPS {
            let (hz, grad) = corr.smoothed(&z, p);
            let tangent = &grad - &z * z.dot(&grad);
            let tn = tangent.norm();
            if tn < 1e-14 {
                break;
            }
            let dir = tangent * (-sign / tn);
            let mut moved = false;
            let mut t = step;
            while t > 1e-12 {
                let cand = (&z + &dir * t).normalize();
                if sign * corr.smoothed(&cand, p).0 < sign * hz {
                    z = cand;
                    step = (2.0 * t).min(0.5);
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
    }
    z
}

/// Greedy pattern search on the sphere: coordinate and random directions,
/// step halved whenever no direction improves.
fn refine(
    k: usize,
    h: &impl Fn(&DVector<f64>) -> f64,
    mut z: DVector<f64>,
    better: &impl Fn(f64, f64) -> bool,
    rng: &mut Rng,
) -> f64 {
    let mut val = h(&z);
    let mut step = REFINE_START_STEP;
    let mut evals = 1;
    while step > REFINE_MIN_STEP && evals < REFINE_MAX_EVALS {
        let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(3 * k);
        for t in 0..k {
            let mut e = DVector::zeros(k);
            e[t] = 1.0;
            dirs.push(-&e);
            dirs.push(e);
        }
        for _ in 0..k.max(2) {
            dirs.push(DVector::from_fn(k, |_, _| StandardNormal.sample(&mut *rng)));
        }
        let mut improved = false;
        for d in dirs {
            let cand = &z + d * step;
            let norm = cand.norm();
            if norm == 0.0 {
                continue;
            }
            let cand = cand / norm;
            let cv = h(&cand);
            evals += 1;
            if better(cv, val) {
                z = cand;
                val = cv;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    val
}

fn arccos_clamped(c: f64) -> f64 {
    c.clamp(-1.0, 1.0).acos()
}

/// `arccos(max_b ‖D_bᵀ v̂‖ / √m_b)` with `v̂ = v/‖v‖`.
pub fn angular_distance(v: &DVector<f64>, d: &BlockDictionary) -> Result<f64> {
    if v.len() != d.dim() {
        return Err(Error::invalid("vector and dictionary dimensions differ"));
    }
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::invalid("angular distance needs a finite nonzero vector"));
    }
    let u = v / norm;
    let f = (0..d.block_count())
        .map(|b| d.view(b).tr_mul(&u).norm() / (d.blocks()[b].len as f64).sqrt())
        .fold(0.0, f64::max);
    Ok(arccos_clamped(f))
}

fn span_basis(blocks: &[DMatrix<f64>], dim: usize) -> Result<DMatrix<f64>> {
    let basis = orthonormal_span(&stack(blocks, dim));
    if basis.ncols() == 0 {
        return Err(Error::invalid("dictionary spans the zero subspace"));
    }
    Ok(basis)
}

/// Minimum block correlation over the span sphere of `blocks`.
fn min_correlation(blocks: &[DMatrix<f64>], dim: usize, samples: usize, seed: u64) -> Result<SphereEstimate> {
    if samples == 0 {
        return Err(Error::invalid("at least one sample is required"));
    }
    let basis = span_basis(blocks, dim)?;
    let corr = Correlator::new(blocks, &basis);
    Ok(sphere_search(&corr, Goal::Minimize, samples, seed))
}

/// Covering radius: the largest angular distance from the unit sphere of
/// `span(D)` to `D`. Returns the angle estimate in radians.
pub fn covering_radius(d: &BlockDictionary, samples: usize, seed: u64) -> Result<f64> {
    let est = min_correlation(&blocks_of(d), d.dim(), samples, seed)?;
    Ok(arccos_clamped(est.value))
}

/// Circumradius of the polar set `{w ∈ span(D) : max_b ‖D_bᵀw‖/√m_b ≤ 1}`.
///
/// Returns `f64::INFINITY` if a direction with zero correlation was found.
pub fn circumradius_polar(d: &BlockDictionary, samples: usize, seed: u64) -> Result<f64> {
    let est = min_correlation(&blocks_of(d), d.dim(), samples, seed)?;
    Ok(if est.value > 0.0 { 1.0 / est.value } else { f64::INFINITY })
}

/// Blocks of the target pair `(D_s[i*], D_a[i*][j*])` and of the complement:
/// all other signal blocks and every attack block whose type is not `j*`.
fn split_target(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    i_star: usize,
    j_star: usize,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let s = d_s
        .find(BlockLabel::Class(i_star))
        .ok_or_else(|| Error::UnknownBlock(BlockLabel::Class(i_star).to_string()))?;
    let target_attack = BlockLabel::Attack { class: i_star, attack: j_star };
    let a = d_a.find(target_attack).ok_or_else(|| Error::UnknownBlock(target_attack.to_string()))?;
    let target = vec![d_s.view(s).into_owned(), d_a.view(a).into_owned()];
    let mut complement = Vec::new();
    for b in 0..d_s.block_count() {
        if b != s {
            complement.push(d_s.view(b).into_owned());
        }
    }
    for (b, blk) in d_a.blocks().iter().enumerate() {
        if blk.label.attack() != Some(j_star) {
            complement.push(d_a.view(b).into_owned());
        }
    }
    Ok((target, complement))
}

/// Smallest angular distance from the unit sphere of
/// `span(D_s[i*] ∪ D_a[i*][j*])` to the complement blocks.
///
/// The flag is set when the complement is empty (the angle is then π/2).
pub fn theta_to_complement(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    i_star: usize,
    j_star: usize,
    samples: usize,
    seed: u64,
) -> Result<(f64, bool)> {
    let (target, complement) = split_target(d_s, d_a, i_star, j_star)?;
    theta_between(&target, &complement, d_s.dim(), samples, seed)
}

fn theta_between(
    target: &[DMatrix<f64>],
    complement: &[DMatrix<f64>],
    dim: usize,
    samples: usize,
    seed: u64,
) -> Result<(f64, bool)> {
    if samples == 0 {
        return Err(Error::invalid("at least one sample is required"));
    }
    if complement.is_empty() {
        return Ok((FRAC_PI_2, true));
    }
    let basis = span_basis(target, dim)?;
    let corr = Correlator::new(complement, &basis);
    let est = sphere_search(&corr, Goal::Maximize, samples, seed);
    Ok((arccos_clamped(est.value), false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    pub i_star: usize,
    pub j_star: usize,
    /// Covering radius of the target blocks (radians, estimate from below).
    pub covering_radius: f64,
    /// Angular distance from the target span to the complement (radians,
    /// estimate from above).
    pub theta_min: f64,
    pub prc_margin: f64,
    pub circumradius: f64,
    /// `|cos(covering_radius)·circumradius − 1|`.
    pub polar_gap: f64,
    pub samples: usize,
    pub seed: u64,
    /// Blocks of different widths were scaled individually.
    pub unequal_widths: bool,
    pub complement_empty: bool,
}

impl GeometryReport {
    pub const CSV_HEADER: &'static str =
        "i_star,j_star,covering_radius,theta_min,prc_margin,circumradius,polar_gap,samples,seed,unequal_widths,complement_empty";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{}",
            self.i_star,
            self.j_star,
            self.covering_radius,
            self.theta_min,
            self.prc_margin,
            self.circumradius,
            self.polar_gap,
            self.samples,
            self.seed,
            self.unequal_widths as u8,
            self.complement_empty as u8
        )
    }

    /// `key = value` lines; estimates are Monte-Carlo with the stated bias.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "i_star = {}", self.i_star);
        let _ = writeln!(out, "j_star = {}", self.j_star);
        let _ = writeln!(out, "covering_radius = {:.12e}", self.covering_radius);
        let _ = writeln!(out, "covering_radius_bias = low");
        let _ = writeln!(out, "theta_min = {:.12e}", self.theta_min);
        let _ = writeln!(out, "theta_min_bias = high");
        let _ = writeln!(out, "prc_margin = {:.12e}", self.prc_margin);
        let _ = writeln!(out, "circumradius = {:.12e}", self.circumradius);
        let _ = writeln!(out, "polar_gap = {:.12e}", self.polar_gap);
        let _ = writeln!(out, "samples = {}", self.samples);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "estimator = monte_carlo");
        let _ = writeln!(out, "unequal_widths = {}", self.unequal_widths);
        let _ = writeln!(out, "complement_empty = {}", self.complement_empty);
        out
    }
}

/// Covering radius of the target pair, distance to the complement, the
/// margin between them, and the circumradius cross-check. The circumradius
/// uses an independent sample stream (`seed + 1`).
pub fn prc_check(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    i_star: usize,
    j_star: usize,
    samples: usize,
    seed: u64,
) -> Result<GeometryReport> {
    let (target, complement) = split_target(d_s, d_a, i_star, j_star)?;
    let dim = d_s.dim();
    let gamma = arccos_clamped(min_correlation(&target, dim, samples, seed)?.value);
    let (theta, complement_empty) = theta_between(&target, &complement, dim, samples, seed)?;
    let polar = min_correlation(&target, dim, samples, seed.wrapping_add(1))?.value;
    let circumradius = if polar > 0.0 { 1.0 / polar } else { f64::INFINITY };
    let mut all = target.clone();
    all.extend(complement.iter().cloned());
    Ok(GeometryReport {
        i_star,
        j_star,
        covering_radius: gamma,
        theta_min: theta,
        prc_margin: theta - gamma,
        circumradius,
        polar_gap: (gamma.cos() * circumradius - 1.0).abs(),
        samples,
        seed,
        unequal_widths: unequal_widths(&all),
        complement_empty,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormOutcome {
    /// Smallest group norm representing `x'` with the target pair alone.
    pub lhs: f64,
    /// Smallest group norm representing `x'` without the target class and
    /// attack type; `+∞` when that is impossible.
    pub rhs: f64,
    pub holds: bool,
    pub wrong_class_infeasible: bool,
}

/// Compares the constrained minimum over `{D_s[i*], D_a[i*][j*]}` with the
/// constrained minimum over the signal blocks `i ≠ i*` and the attack blocks
/// `(i, j)` with `j ≠ j*` (all classes `i`).
pub fn min_norm_check(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    i_star: usize,
    j_star: usize,
    cfg: &SolverConfig,
) -> Result<MinNormOutcome> {
    let s = d_s
        .find(BlockLabel::Class(i_star))
        .ok_or_else(|| Error::UnknownBlock(BlockLabel::Class(i_star).to_string()))?;
    let target_attack = BlockLabel::Attack { class: i_star, attack: j_star };
    let a = d_a.find(target_attack).ok_or_else(|| Error::UnknownBlock(target_attack.to_string()))?;

    let (ts, ta) = (d_s.subset(&[s]), d_a.subset(&[a]));
    let right = solve_constrained(&ts, &ta, x, cfg)?;
    let lhs = if right.infeasible { f64::INFINITY } else { right.group_norm(&ts, &ta) };

    let ws = d_s.subset(&d_s.positions_where(|l| l != BlockLabel::Class(i_star)));
    let wa = d_a.subset(&d_a.positions_where(|l| l.attack() != Some(j_star)));
    let wrong = solve_constrained(&ws, &wa, x, cfg)?;
    let (rhs, infeasible) = if wrong.infeasible {
        (f64::INFINITY, true)
    } else {
        (wrong.group_norm(&ws, &wa), false)
    };
    Ok(MinNormOutcome {
        lhs,
        rhs,
        holds: infeasible || lhs < rhs,
        wrong_class_infeasible: infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn dict(n: usize, blocks: Vec<(BlockLabel, DMatrix<f64>)>) -> BlockDictionary {
        BlockDictionary::from_blocks(n, blocks, true).unwrap()
    }

    fn e(n: usize, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(n, cols.len(), |i, j| (i == cols[j]) as u8 as f64)
    }

    #[test]
    fn angular_distance_examples() {
        let d = dict(3, vec![(BlockLabel::Class(0), e(3, &[0, 1]))]);
        let ortho = DVector::from_column_slice(&[0.0, 0.0, 2.0]);
        assert!((angular_distance(&ortho, &d).unwrap() - FRAC_PI_2).abs() < 1e-15);
        let e1 = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        assert!((angular_distance(&e1, &d).unwrap() - FRAC_PI_4).abs() < 1e-12);
        let single = dict(3, vec![(BlockLabel::Class(0), e(3, &[2]))]);
        assert_eq!(angular_distance(&ortho, &single).unwrap(), 0.0);
        assert!(angular_distance(&DVector::zeros(3), &d).is_err());
    }

    #[test]
    fn single_column_block() {
        let d = dict(4, vec![(BlockLabel::Class(0), DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 0.0, -1.0]))]);
        assert!(covering_radius(&d, 50, 1).unwrap() < 1e-7);
        assert!((circumradius_polar(&d, 50, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_block_closed_form() {
        let d = dict(6, vec![(BlockLabel::Class(0), e(6, &[0, 1, 2, 3]))]);
        assert!((covering_radius(&d, 200, 3).unwrap() - (0.5f64).acos()).abs() < 1e-9);
        assert!((circumradius_polar(&d, 200, 3).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_dictionary_is_rejected() {
        assert!(covering_radius(&BlockDictionary::empty(3), 10, 0).is_err());
    }

    #[test]
    fn orthogonal_complement_gives_right_angle() {
        let d_s = dict(6, vec![(BlockLabel::Class(0), e(6, &[0])), (BlockLabel::Class(1), e(6, &[2]))]);
        let d_a = dict(
            6,
            vec![
                (BlockLabel::Attack { class: 0, attack: 0 }, e(6, &[1])),
                (BlockLabel::Attack { class: 0, attack: 1 }, e(6, &[3])),
            ],
        );
        let (theta, empty) = theta_to_complement(&d_s, &d_a, 0, 0, 100, 0).unwrap();
        assert!(!empty);
        assert!((theta - FRAC_PI_2).abs() < 1e-12);
        let report = prc_check(&d_s, &d_a, 0, 0, 100, 0).unwrap();
        assert!(report.prc_margin > 0.0);
        assert_eq!(report, prc_check(&d_s, &d_a, 0, 0, 100, 0).unwrap());
        assert_eq!(report.to_key_value().lines().count(), 14);
        assert_eq!(report.csv_row().split(',').count(), GeometryReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn empty_complement_is_flagged() {
        let d_s = dict(2, vec![(BlockLabel::Class(0), e(2, &[0]))]);
        let d_a = dict(2, vec![(BlockLabel::Attack { class: 0, attack: 0 }, e(2, &[1]))]);
        assert_eq!(theta_to_complement(&d_s, &d_a, 0, 0, 10, 0).unwrap(), (FRAC_PI_2, true));
    }

    #[test]
    fn orthogonal_wrong_class_is_infeasible() {
        let d_s = dict(4, vec![(BlockLabel::Class(0), e(4, &[0])), (BlockLabel::Class(1), e(4, &[2]))]);
        let d_a = dict(
            4,
            vec![
                (BlockLabel::Attack { class: 0, attack: 0 }, e(4, &[1])),
                (BlockLabel::Attack { class: 1, attack: 1 }, e(4, &[3])),
            ],
        );
        let x = DVector::from_column_slice(&[1.0, 0.5, 0.0, 0.0]);
        let out = min_norm_check(&d_s, &d_a, &x, 0, 0, &SolverConfig::default()).unwrap();
        assert!(out.holds && out.wrong_class_infeasible);
        assert!((out.lhs - 1.5).abs() < 1e-5);
    }
}
