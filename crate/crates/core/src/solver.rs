//! Group-sparse recovery over a signal dictionary `D_s` and an attack
//! dictionary `D_a`:
//!
//! ```text
//! min ½‖x' − D_s c_s − D_a c_a‖² + λ_s Σ_i ‖c_s[i]‖ + λ_a Σ_{i,j} ‖c_a[i][j]‖
//! ```
//!
//! The inner solver is accelerated proximal gradient with block
//! soft-thresholding, function-value and gradient restarts (so the objective
//! never increases), and a KKT-based stopping test. On top of it sit the
//! active-set homotopy and a λ-continuation for the equality-constrained
//! problem.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::dictionary::BlockDictionary;
use crate::linalg::{argmax, orthonormal_span, projection_residual};
use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Shrink factor applied to the largest block correlation in each
    /// homotopy step.
    pub gamma: f64,
    pub max_outer_iters: usize,
    pub inner_max_iters: usize,
    /// Stop when the KKT residual (sup over blocks) falls below this.
    pub inner_tolerance: f64,
    /// Smallest λ tried by the constrained solve.
    pub continuation_floor: f64,
    /// Constrained solve: feasible when `‖residual‖ ≤ this · ‖x'‖`.
    pub feasibility_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            max_outer_iters: 30,
            inner_max_iters: 20_000,
            inner_tolerance: 1e-8,
            continuation_floor: 1e-10,
            feasibility_tolerance: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1)"));
        }
        if self.max_outer_iters == 0 || self.inner_max_iters == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        for (name, v) in [
            ("inner_tolerance", self.inner_tolerance),
            ("continuation_floor", self.continuation_floor),
            ("feasibility_tolerance", self.feasibility_tolerance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One outer step of the active-set homotopy.
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyStep {
    pub lambda_s: f64,
    pub lambda_a: f64,
    /// Signal block position selected this step, if any correlation was nonzero.
    pub added_s: Option<usize>,
    pub added_a: Option<usize>,
    /// Whether the selected blocks were new to the active sets.
    pub grew: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseSolution {
    pub c_s: DVector<f64>,
    pub c_a: DVector<f64>,
    /// Signal block positions allowed to be nonzero, ascending.
    pub active_s: Vec<usize>,
    /// Attack block positions allowed to be nonzero, ascending.
    pub active_a: Vec<usize>,
    pub lambda_s: f64,
    pub lambda_a: f64,
    pub residual: DVector<f64>,
    pub objective: f64,
    /// KKT residual of the full (unrestricted) problem at the final λ's.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub outer_limit_reached: bool,
    /// Constrained mode only: the residual could not be driven below the
    /// feasibility tolerance.
    pub infeasible: bool,
    pub homotopy_trace: Vec<HomotopyStep>,
}

impl BlockSparseSolution {
    pub fn signal_block_norms(&self, d_s: &BlockDictionary) -> Vec<f64> {
        block_norms(d_s, &self.c_s)
    }

    pub fn attack_block_norms(&self, d_a: &BlockDictionary) -> Vec<f64> {
        block_norms(d_a, &self.c_a)
    }

    /// `Σ_i ‖c_s[i]‖ + Σ_{i,j} ‖c_a[i][j]‖`.
    pub fn group_norm(&self, d_s: &BlockDictionary, d_a: &BlockDictionary) -> f64 {
        self.signal_block_norms(d_s).iter().sum::<f64>() + self.attack_block_norms(d_a).iter().sum::<f64>()
    }

    /// One row per block (`label,norm,active`) followed by a summary row.
    pub fn to_csv(&self, d_s: &BlockDictionary, d_a: &BlockDictionary) -> String {
        let mut out = String::from("label,norm,active\n");
        for (dict, coeffs, active) in [(d_s, &self.c_s, &self.active_s), (d_a, &self.c_a, &self.active_a)] {
            for (b, norm) in block_norms(dict, coeffs).into_iter().enumerate() {
                let _ = writeln!(out, "{},{norm:e},{}", dict.blocks()[b].label, active.contains(&b) as u8);
            }
        }
        let _ = writeln!(
            out,
            "summary,objective={:e};residual={:e};kkt={:e};iterations={};lambda_s={:e};lambda_a={:e},{}",
            self.objective,
            self.residual.norm(),
            self.kkt_residual,
            self.iterations,
            self.lambda_s,
            self.lambda_a,
            self.converged as u8
        );
        out
    }
}

fn block_norms(d: &BlockDictionary, c: &DVector<f64>) -> Vec<f64> {
    d.blocks().iter().map(|b| c.rows(b.start, b.len).norm()).collect()
}

/// Proximal map of `λ‖·‖₂`: zero when `‖z‖ ≤ λ`, otherwise `(1 − λ/‖z‖) z`.
pub fn block_soft_threshold(z: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let norm = z.norm();
    if norm <= lambda {
        DVector::zeros(z.len())
    } else {
        z * (1.0 - lambda / norm)
    }
}

/// `max_b ‖D_bᵀ v‖₂`; the smallest λ for which zero is optimal.
pub fn lambda_max(d: &BlockDictionary, v: &DVector<f64>) -> f64 {
    block_correlations(d, v).into_iter().fold(0.0, f64::max)
}

/// `‖D_bᵀ v‖₂` for every block `b`.
pub fn block_correlations(d: &BlockDictionary, v: &DVector<f64>) -> Vec<f64> {
    let g = d.atoms().tr_mul(v);
    d.blocks().iter().map(|b| g.rows(b.start, b.len).norm()).collect()
}

fn check_shapes(d_s: &BlockDictionary, d_a: &BlockDictionary, x: &DVector<f64>) -> Result<()> {
    if d_s.dim() != x.len() || d_a.dim() != x.len() {
        return Err(Error::invalid(format!(
            "dictionaries live in R^{} and R^{}, input in R^{}",
            d_s.dim(),
            d_a.dim(),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input has non-finite entries"));
    }
    Ok(())
}

fn residual_of(d_s: &BlockDictionary, d_a: &BlockDictionary, x: &DVector<f64>, c_s: &DVector<f64>, c_a: &DVector<f64>) -> DVector<f64> {
    x - d_s.atoms() * c_s - d_a.atoms() * c_a
}

/// KKT violation of `(c_s, c_a)`: the largest per-block distance from
/// stationarity, `‖D_bᵀo − λ c_b/‖c_b‖‖` on nonzero blocks and
/// `max(0, ‖D_bᵀo‖ − λ)` on zero blocks, with `o` the residual.
pub fn kkt_residual(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    c_s: &DVector<f64>,
    c_a: &DVector<f64>,
    lambda_s: f64,
    lambda_a: f64,
) -> f64 {
    let o = residual_of(d_s, d_a, x, c_s, c_a);
    let mut worst: f64 = 0.0;
    for (d, c, lambda) in [(d_s, c_s, lambda_s), (d_a, c_a, lambda_a)] {
        let g = d.atoms().tr_mul(&o);
        for b in d.blocks() {
            worst = worst.max(block_kkt(&g.rows(b.start, b.len).into_owned(), &c.rows(b.start, b.len).into_owned(), lambda));
        }
    }
    worst
}

fn block_kkt(g: &DVector<f64>, c: &DVector<f64>, lambda: f64) -> f64 {
    let cn = c.norm();
    if cn == 0.0 {
        (g.norm() - lambda).max(0.0)
    } else {
        (g - c * (lambda / cn)).norm()
    }
}

/// `½‖o‖² + λ_s Σ‖c_s[i]‖ + λ_a Σ‖c_a[i][j]‖`.
pub fn objective(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    c_s: &DVector<f64>,
    c_a: &DVector<f64>,
    lambda_s: f64,
    lambda_a: f64,
) -> f64 {
    let o = residual_of(d_s, d_a, x, c_s, c_a);
    0.5 * o.norm_squared()
        + lambda_s * block_norms(d_s, c_s).iter().sum::<f64>()
        + lambda_a * block_norms(d_a, c_a).iter().sum::<f64>()
}

/// Squared spectral norm of `a`: exact from the smaller Gram matrix when that
/// is cheap, power iteration with a safety margin otherwise.
fn lipschitz_constant(a: &DMatrix<f64>) -> f64 {
    let (n, m) = a.shape();
    if n == 0 || m == 0 {
        return 0.0;
    }
    if n.min(m) <= 400 {
        let gram = if m <= n { a.tr_mul(a) } else { a * a.transpose() };
        let top = gram.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
        return top * (1.0 + 1e-10);
    }
    let mut v = crate::linalg::unit_sphere_sample(m, &mut rng_from_seed(0x5eed));
    let mut est = 0.0;
    for _ in 0..500 {
        let w = a.tr_mul(&(a * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= 1e-10 * next {
            est = next;
            break;
        }
        est = next;
    }
    est * 1.02
}

/// Group lasso over one matrix with a λ per group.
struct GroupLasso<'a> {
    a: &'a DMatrix<f64>,
    groups: Vec<Range<usize>>,
    lambdas: Vec<f64>,
    lipschitz: f64,
}

struct InnerResult {
    c: DVector<f64>,
    iterations: usize,
    converged: bool,
}

const KKT_CHECK_EVERY: usize = 10;

/// Relative size below which a block correlation counts as zero.
const NEGLIGIBLE_CORRELATION: f64 = 1e-12;

impl<'a> GroupLasso<'a> {
    fn new(a: &'a DMatrix<f64>, groups: Vec<Range<usize>>, lambdas: Vec<f64>) -> Self {
        let lipschitz = lipschitz_constant(a);
        Self { a, groups, lambdas, lipschitz }
    }

    fn penalty(&self, c: &DVector<f64>) -> f64 {
        self.groups
            .iter()
            .zip(&self.lambdas)
            .map(|(g, &l)| l * c.rows(g.start, g.len()).norm())
            .sum()
    }

    fn value(&self, x: &DVector<f64>, c: &DVector<f64>, ac: &DVector<f64>) -> f64 {
        0.5 * (x - ac).norm_squared() + self.penalty(c)
    }

    fn prox(&self, z: &DVector<f64>, step: f64) -> DVector<f64> {
        let mut out = DVector::zeros(z.len());
        for (g, &l) in self.groups.iter().zip(&self.lambdas) {
            let part = block_soft_threshold(&z.rows(g.start, g.len()).into_owned(), l * step);
            out.rows_mut(g.start, g.len()).copy_from(&part);
        }
        out
    }

    /// `grad_neg = Aᵀ(x − Ac)`.
    fn kkt(&self, c: &DVector<f64>, grad_neg: &DVector<f64>) -> f64 {
        self.groups
            .iter()
            .zip(&self.lambdas)
            .map(|(g, &l)| {
                block_kkt(
                    &grad_neg.rows(g.start, g.len()).into_owned(),
                    &c.rows(g.start, g.len()).into_owned(),
                    l,
                )
            })
            .fold(0.0, f64::max)
    }

    fn solve(
        &self,
        x: &DVector<f64>,
        warm: Option<DVector<f64>>,
        tol: f64,
        max_iter: usize,
        mut history: Option<&mut Vec<f64>>,
    ) -> InnerResult {
        let m = self.a.ncols();
        let atx = self.a.tr_mul(x);
        let zero = DVector::zeros(m);
        let zero_kkt = self.kkt(&zero, &atx);
        if zero_kkt == 0.0 || self.lipschitz == 0.0 {
            // Zero is optimal: all block correlations are within their λ.
            return InnerResult { c: zero, iterations: 0, converged: zero_kkt <= tol };
        }
        let step = 1.0 / self.lipschitz;

        let mut c = warm.filter(|w| w.len() == m).unwrap_or(zero);
        let mut ac = self.a * &c;
        let mut fc = self.value(x, &c, &ac);
        let mut y = c.clone();
        let mut ay = ac.clone();
        let mut t = 1.0_f64;
        if let Some(h) = history.as_deref_mut() {
            h.push(fc);
        }
        let mut kkt = self.kkt(&c, &(&atx - self.a.tr_mul(&ac)));
        if kkt <= tol {
            return InnerResult { c, iterations: 0, converged: true };
        }

        for it in 1..=max_iter {
            let grad = self.a.tr_mul(&(&ay - x));
            let z = self.prox(&(&y - grad * step), step);
            let az = self.a * &z;
            let fz = self.value(x, &z, &az);
            let mut stalled = false;
            // Rounding in the objective must not block progress near the optimum.
            let slack = 4.0 * f64::EPSILON * fc.abs();
            if fz <= fc + slack {
                let restart = (&y - &z).dot(&(&z - &c)) > 0.0;
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let beta = (t - 1.0) / t_next;
                let c_prev = std::mem::replace(&mut c, z);
                let ac_prev = std::mem::replace(&mut ac, az);
                fc = fz;
                if restart || beta == 0.0 {
                    t = 1.0;
                    y = c.clone();
                    ay = ac.clone();
                } else {
                    y = &c + (&c - c_prev) * beta;
                    ay = &ac + (&ac - ac_prev) * beta;
                    t = t_next;
                }
            } else {
                // A plain proximal step from `c` cannot increase the objective
                // except through rounding, so a rejection right after a
                // restart means we are at the numerical floor.
                stalled = t == 1.0 && y == c;
                t = 1.0;
                y = c.clone();
                ay = ac.clone();
            }
            if let Some(h) = history.as_deref_mut() {
                h.push(fc);
            }
            if stalled || it % KKT_CHECK_EVERY == 0 || it == max_iter {
                kkt = self.kkt(&c, &(&atx - self.a.tr_mul(&ac)));
                if kkt <= tol || stalled {
                    return InnerResult { c, iterations: it, converged: kkt <= tol };
                }
            }
        }
        InnerResult { c, iterations: max_iter, converged: kkt <= tol }
    }
}

/// Concatenation of the chosen blocks of both dictionaries, with the group
/// ranges inside the concatenation.
fn stack_blocks(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    sel_s: &[usize],
    sel_a: &[usize],
) -> (DMatrix<f64>, Vec<Range<usize>>) {
    let width: usize = sel_s.iter().map(|&b| d_s.blocks()[b].len).sum::<usize>()
        + sel_a.iter().map(|&b| d_a.blocks()[b].len).sum::<usize>();
    let mut a = DMatrix::zeros(d_s.dim(), width);
    let mut groups = Vec::with_capacity(sel_s.len() + sel_a.len());
    let mut at = 0;
    for (d, sel) in [(d_s, sel_s), (d_a, sel_a)] {
        for &b in sel {
            let len = d.blocks()[b].len;
            a.columns_mut(at, len).copy_from(&d.view(b));
            groups.push(at..at + len);
            at += len;
        }
    }
    (a, groups)
}

/// Gathers the coefficients of the chosen blocks into one vector.
fn gather(d_s: &BlockDictionary, d_a: &BlockDictionary, sel_s: &[usize], sel_a: &[usize], c_s: &DVector<f64>, c_a: &DVector<f64>) -> DVector<f64> {
    let mut out = Vec::new();
    for (d, sel, c) in [(d_s, sel_s, c_s), (d_a, sel_a, c_a)] {
        for &b in sel {
            let blk = d.blocks()[b];
            out.extend(c.rows(blk.start, blk.len).iter());
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`gather`]: writes restricted coefficients into full vectors.
fn scatter(d_s: &BlockDictionary, d_a: &BlockDictionary, sel_s: &[usize], sel_a: &[usize], c: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let mut c_s = DVector::zeros(d_s.column_count());
    let mut c_a = DVector::zeros(d_a.column_count());
    let mut at = 0;
    for (d, sel, target) in [(d_s, sel_s, &mut c_s), (d_a, sel_a, &mut c_a)] {
        for &b in sel {
            let blk = d.blocks()[b];
            target.rows_mut(blk.start, blk.len).copy_from(&c.rows(at, blk.len));
            at += blk.len;
        }
    }
    (c_s, c_a)
}

struct Restricted {
    c_s: DVector<f64>,
    c_a: DVector<f64>,
    iterations: usize,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn solve_restricted(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    sel_s: &[usize],
    sel_a: &[usize],
    lambda_s: f64,
    lambda_a: f64,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
    tol: f64,
    max_iter: usize,
) -> Restricted {
    let (a, groups) = stack_blocks(d_s, d_a, sel_s, sel_a);
    let lambdas = (0..groups.len())
        .map(|g| if g < sel_s.len() { lambda_s } else { lambda_a })
        .collect();
    let problem = GroupLasso::new(&a, groups, lambdas);
    let warm = warm.map(|(ws, wa)| gather(d_s, d_a, sel_s, sel_a, ws, wa));
    let inner = problem.solve(x, warm, tol, max_iter, None);
    let (c_s, c_a) = scatter(d_s, d_a, sel_s, sel_a, &inner.c);
    Restricted { c_s, c_a, iterations: inner.iterations, converged: inner.converged }
}

fn nonzero_blocks(d: &BlockDictionary, c: &DVector<f64>) -> Vec<usize> {
    block_norms(d, c).iter().enumerate().filter(|(_, &n)| n > 0.0).map(|(b, _)| b).collect()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    c_s: DVector<f64>,
    c_a: DVector<f64>,
    active_s: Vec<usize>,
    active_a: Vec<usize>,
    lambda_s: f64,
    lambda_a: f64,
    iterations: usize,
    converged: bool,
) -> BlockSparseSolution {
    let residual = residual_of(d_s, d_a, x, &c_s, &c_a);
    let objective = objective(d_s, d_a, x, &c_s, &c_a, lambda_s, lambda_a);
    let kkt = kkt_residual(d_s, d_a, x, &c_s, &c_a, lambda_s, lambda_a);
    BlockSparseSolution {
        c_s,
        c_a,
        active_s,
        active_a,
        lambda_s,
        lambda_a,
        residual,
        objective,
        kkt_residual: kkt,
        iterations,
        converged,
        outer_limit_reached: false,
        infeasible: false,
        homotopy_trace: Vec::new(),
    }
}

fn all_blocks(d: &BlockDictionary) -> Vec<usize> {
    (0..d.block_count()).collect()
}

/// Solves the regularized problem over all blocks of both dictionaries.
///
/// Returns with `converged = false` (never an error) when the iteration
/// budget runs out before the KKT tolerance is met.
pub fn solve_regularized(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    lambda_s: f64,
    lambda_a: f64,
    cfg: &SolverConfig,
) -> Result<BlockSparseSolution> {
    if !(lambda_s > 0.0 && lambda_a > 0.0) || !lambda_s.is_finite() || !lambda_a.is_finite() {
        return Err(Error::invalid("regularization weights must be positive and finite"));
    }
    solve_regularized_warm(d_s, d_a, x, lambda_s, lambda_a, cfg, None)
}

/// [`solve_regularized`] with an optional warm start; λ = 0 is accepted.
pub fn solve_regularized_warm(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    lambda_s: f64,
    lambda_a: f64,
    cfg: &SolverConfig,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<BlockSparseSolution> {
    cfg.validate()?;
    check_shapes(d_s, d_a, x)?;
    if lambda_s < 0.0 || lambda_a < 0.0 {
        return Err(Error::invalid("regularization weights must be non-negative"));
    }
    let (sel_s, sel_a) = (all_blocks(d_s), all_blocks(d_a));
    let r = solve_restricted(d_s, d_a, x, &sel_s, &sel_a, lambda_s, lambda_a, warm, cfg.inner_tolerance, cfg.inner_max_iters);
    let (active_s, active_a) = (nonzero_blocks(d_s, &r.c_s), nonzero_blocks(d_a, &r.c_a));
    Ok(finish(d_s, d_a, x, r.c_s, r.c_a, active_s, active_a, lambda_s, lambda_a, r.iterations, r.converged))
}

/// Objective value after every inner iteration of a full regularized solve
/// started from zero (the first entry is the starting value).
pub fn objective_history(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    lambda_s: f64,
    lambda_a: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_shapes(d_s, d_a, x)?;
    let (sel_s, sel_a) = (all_blocks(d_s), all_blocks(d_a));
    let (a, groups) = stack_blocks(d_s, d_a, &sel_s, &sel_a);
    let lambdas = (0..groups.len()).map(|g| if g < sel_s.len() { lambda_s } else { lambda_a }).collect();
    let mut history = Vec::new();
    GroupLasso::new(&a, groups, lambdas).solve(x, None, cfg.inner_tolerance, cfg.inner_max_iters, Some(&mut history));
    Ok(history)
}

/// Active-set homotopy.
///
/// Each outer step sets `λ_s = γ·max_i ‖D_s[i]ᵀo‖` and
/// `λ_a = γ·max_{i,j} ‖D_a[i][j]ᵀo‖` from the current residual `o`, adds the
/// two maximizing blocks to the active sets and re-solves over the active
/// blocks only, warm-started. The loop ends after the first step that adds
/// no new block (that step's solve is kept), or at `max_outer_iters`.
pub fn active_set_homotopy(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<BlockSparseSolution> {
    cfg.validate()?;
    check_shapes(d_s, d_a, x)?;
    let mut c_s = DVector::zeros(d_s.column_count());
    let mut c_a = DVector::zeros(d_a.column_count());
    let mut active_s: Vec<usize> = Vec::new();
    let mut active_a: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let (mut lambda_s, mut lambda_a) = (lambda_max(d_s, x), lambda_max(d_a, x));
    let mut iterations = 0;
    let mut converged = true;
    let mut outer_limit_reached = true;

    for _ in 0..cfg.max_outer_iters {
        let o = residual_of(d_s, d_a, x, &c_s, &c_a);
        let corr_s = block_correlations(d_s, &o);
        let corr_a = block_correlations(d_a, &o);
        // Correlations at rounding level are treated as exact zeros.
        let negligible = NEGLIGIBLE_CORRELATION * x.norm();
        let pick = |corr: &[f64]| argmax(corr).filter(|&b| corr[b] > negligible);
        let (added_s, added_a) = (pick(&corr_s), pick(&corr_a));
        if added_s.is_none() && added_a.is_none() {
            // Residual orthogonal to every atom: nothing left to explain.
            outer_limit_reached = false;
            break;
        }
        lambda_s = cfg.gamma * added_s.map_or(0.0, |b| corr_s[b]);
        lambda_a = cfg.gamma * added_a.map_or(0.0, |b| corr_a[b]);
        let mut grew = false;
        for (added, active) in [(added_s, &mut active_s), (added_a, &mut active_a)] {
            if let Some(b) = added {
                if let Err(pos) = active.binary_search(&b) {
                    active.insert(pos, b);
                    grew = true;
                }
            }
        }
        trace.push(HomotopyStep { lambda_s, lambda_a, added_s, added_a, grew });

        let r = solve_restricted(
            d_s,
            d_a,
            x,
            &active_s,
            &active_a,
            lambda_s,
            lambda_a,
            Some((&c_s, &c_a)),
            cfg.inner_tolerance,
            cfg.inner_max_iters,
        );
        iterations += r.iterations;
        converged = r.converged;
        c_s = r.c_s;
        c_a = r.c_a;
        if !grew {
            outer_limit_reached = false;
            break;
        }
    }

    let mut sol = finish(d_s, d_a, x, c_s, c_a, active_s, active_a, lambda_s, lambda_a, iterations, converged);
    sol.outer_limit_reached = outer_limit_reached;
    sol.homotopy_trace = trace;
    Ok(sol)
}

/// Approximates `min Σ‖c_s[i]‖ + Σ‖c_a[i][j]‖ s.t. x' = D_s c_s + D_a c_a`.
///
/// Runs the regularized solve with `λ_s = λ_a = λ`, halving λ from half the
/// largest block correlation and warm-starting each stage, until the residual
/// is within `feasibility_tolerance·‖x'‖`. If `x'` is not in the range of the
/// dictionaries the loop stops once the residual reaches the projection
/// floor, and the result is flagged infeasible.
pub fn solve_constrained(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<BlockSparseSolution> {
    cfg.validate()?;
    check_shapes(d_s, d_a, x)?;
    let xn = x.norm();
    let (sel_s, sel_a) = (all_blocks(d_s), all_blocks(d_a));
    if xn == 0.0 || d_s.column_count() + d_a.column_count() == 0 {
        let (c_s, c_a) = (DVector::zeros(d_s.column_count()), DVector::zeros(d_a.column_count()));
        let mut sol = finish(d_s, d_a, x, c_s, c_a, Vec::new(), Vec::new(), 0.0, 0.0, 0, true);
        sol.infeasible = xn > 0.0;
        return Ok(sol);
    }

    let (a, groups) = stack_blocks(d_s, d_a, &sel_s, &sel_a);
    let tolerance = cfg.feasibility_tolerance * xn;
    let floor = projection_residual(&orthonormal_span(&a), x);
    let infeasible = floor > tolerance;
    let target = if infeasible { floor + tolerance } else { tolerance };

    let mut lambda = 0.5 * lambda_max(d_s, x).max(lambda_max(d_a, x));
    let mut problem = GroupLasso::new(&a, groups, Vec::new());
    let mut c = DVector::zeros(a.ncols());
    let mut iterations = 0;
    let mut converged;
    loop {
        problem.lambdas = vec![lambda; problem.groups.len()];
        let stage_tol = cfg.inner_tolerance.min(0.1 * lambda).max(1e-14 * xn);
        let inner = problem.solve(x, Some(c), stage_tol, cfg.inner_max_iters, None);
        iterations += inner.iterations;
        converged = inner.converged;
        c = inner.c;
        let res = (x - &a * &c).norm();
        if res <= target || lambda * 0.5 < cfg.continuation_floor {
            break;
        }
        lambda *= 0.5;
    }
    let (c_s, c_a) = scatter(d_s, d_a, &sel_s, &sel_a, &c);
    let (active_s, active_a) = (nonzero_blocks(d_s, &c_s), nonzero_blocks(d_a, &c_a));
    let mut sol = finish(d_s, d_a, x, c_s, c_a, active_s, active_a, lambda, lambda, iterations, converged);
    sol.infeasible = infeasible || sol.residual.norm() > tolerance;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::BlockLabel;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn identity_dict(n: usize) -> BlockDictionary {
        BlockDictionary::from_blocks(n, vec![(BlockLabel::Class(0), DMatrix::identity(n, n))], true).unwrap()
    }

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(block_soft_threshold(&v(&[0.3, 0.4]), 0.5), v(&[0.0, 0.0]));
        assert_eq!(block_soft_threshold(&v(&[3.0, 4.0]), 0.0), v(&[3.0, 4.0]));
        let out = block_soft_threshold(&v(&[3.0, 4.0]), 2.5);
        assert!((out - v(&[1.5, 2.0])).amax() < 1e-15);
    }

    #[test]
    fn lambda_max_of_identity_block() {
        assert_eq!(lambda_max(&identity_dict(2), &v(&[3.0, 4.0])), 5.0);
        let d = BlockDictionary::from_blocks(2, vec![(BlockLabel::Class(0), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))], true).unwrap();
        assert_eq!(lambda_max(&d, &v(&[0.0, 2.0])), 0.0);
    }

    #[test]
    fn zero_input_gives_zero_solution() {
        let d = identity_dict(3);
        let sol = solve_regularized(&d, &BlockDictionary::empty(3), &DVector::zeros(3), 0.1, 0.1, &SolverConfig::default()).unwrap();
        assert_eq!(sol.c_s, DVector::zeros(3));
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn kkt_of_zero_solution() {
        let d = identity_dict(2);
        let e = BlockDictionary::empty(2);
        let x = v(&[3.0, 4.0]);
        let z = DVector::zeros(2);
        assert_eq!(kkt_residual(&d, &e, &x, &z, &DVector::zeros(0), 5.0, 1.0), 0.0);
        assert!(kkt_residual(&d, &e, &x, &z, &DVector::zeros(0), 2.5, 1.0) > 0.0);
    }

    #[test]
    fn identity_block_solution_is_the_prox() {
        let d = identity_dict(2);
        let e = BlockDictionary::empty(2);
        let sol = solve_regularized(&d, &e, &v(&[3.0, 4.0]), 2.5, 1.0, &SolverConfig::default()).unwrap();
        assert!((&sol.c_s - v(&[1.5, 2.0])).amax() < 1e-9);
        assert!(sol.converged);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        cfg.gamma = 0.5;
        cfg.inner_tolerance = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn constrained_single_atom() {
        let d = identity_dict(3);
        let e = BlockDictionary::empty(3);
        let sol = solve_constrained(&d, &e, &v(&[0.0, 1.0, 0.0]), &SolverConfig::default()).unwrap();
        assert!(!sol.infeasible);
        assert!(sol.residual.norm() < 1e-6);
        assert!((sol.group_norm(&d, &e) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constrained_detects_infeasible_input() {
        let d = BlockDictionary::from_blocks(2, vec![(BlockLabel::Class(0), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))], true).unwrap();
        let sol = solve_constrained(&d, &BlockDictionary::empty(2), &v(&[1.0, 1.0]), &SolverConfig::default()).unwrap();
        assert!(sol.infeasible);
        assert!((sol.residual.norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn csv_dump_has_row_per_block() {
        let d = identity_dict(2);
        let e = BlockDictionary::empty(2);
        let sol = solve_regularized(&d, &e, &v(&[3.0, 4.0]), 2.5, 1.0, &SolverConfig::default()).unwrap();
        let csv = sol.to_csv(&d, &e);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("s0,2.5"));
    }
}
