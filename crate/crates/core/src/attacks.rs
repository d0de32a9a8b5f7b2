//! ℓ1 / ℓ2 / ℓ∞ gradient attacks: one-step steepest ascent, projection onto
//! ℓp balls, and projected gradient (PGD) attacks with optional box clipping.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::data::LabeledDataset;
use crate::linalg::unit_sphere_sample;
use crate::network::MlpParams;
use crate::{par_map, rng_from_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::L1, Norm::L2, Norm::Linf];

    pub fn of(self, v: &DVector<f64>) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.norm(),
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "l_inf" | "infinity" => Ok(Norm::Linf),
            other => Err(Error::invalid(format!("unknown norm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub norm: Norm,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    /// Per-coordinate clamp `[lo, hi]` applied to the attacked input.
    pub bounds: Option<(f64, f64)>,
    pub random_start: bool,
    pub seed: u64,
    /// Number of steepest coordinates moved per ℓ1 step.
    pub l1_coordinates: usize,
}

impl AttackSpec {
    pub fn new(norm: Norm, epsilon: f64, step_size: f64, iterations: usize) -> Self {
        Self {
            norm,
            epsilon,
            step_size,
            iterations,
            bounds: None,
            random_start: false,
            seed: 0,
            l1_coordinates: 1,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("attack epsilon must be positive"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid("attack step size must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("attack needs at least one iteration"));
        }
        if self.l1_coordinates == 0 {
            return Err(Error::invalid("l1 step must move at least one coordinate"));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo < hi) {
                return Err(Error::invalid("attack box needs lo < hi"));
            }
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Steepest-ascent attack of size `ε` for a linearized loss with gradient `g`.
///
/// ℓ∞ → `ε·sign(g)`, ℓ2 → `ε·g/‖g‖₂`, ℓ1 → `ε·sign(g_i)·e_i` at the largest
/// `|g_i|` (smallest index on ties).
pub fn one_step_attack(g: &DVector<f64>, norm: Norm, epsilon: f64) -> Result<DVector<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("gradient has non-finite entries"));
    }
    Ok(unit_step(g, norm, 1, None)? * epsilon)
}

/// Unit-size ascent direction; with `allowed`, the ℓ1 step only considers the
/// flagged coordinates.
fn unit_step(g: &DVector<f64>, norm: Norm, k: usize, allowed: Option<&[bool]>) -> Result<DVector<f64>> {
    match norm {
        Norm::Linf => Ok(g.map(sign)),
        Norm::L2 => {
            let n = g.norm();
            if n == 0.0 {
                return Err(Error::DegenerateGradient);
            }
            Ok(g / n)
        }
        Norm::L1 => {
            let mut idx: Vec<usize> = (0..g.len())
                .filter(|&i| g[i] != 0.0 && allowed.is_none_or(|a| a[i]))
                .collect();
            if idx.is_empty() {
                return Err(Error::DegenerateGradient);
            }
            // Stable sort keeps the smallest index first among equal magnitudes.
            idx.sort_by(|&a, &b| g[b].abs().partial_cmp(&g[a].abs()).unwrap());
            let take = k.min(idx.len());
            let mut a = DVector::zeros(g.len());
            for &i in &idx[..take] {
                a[i] = sign(g[i]) / take as f64;
            }
            Ok(a)
        }
    }
}

/// Euclidean projection onto `{‖·‖_p ≤ ε}`.
pub fn project_lp_ball(v: &DVector<f64>, norm: Norm, epsilon: f64) -> DVector<f64> {
    match norm {
        Norm::Linf => v.map(|x| x.clamp(-epsilon, epsilon)),
        Norm::L2 => {
            let n = v.norm();
            if n <= epsilon {
                v.clone()
            } else {
                v * (epsilon / n)
            }
        }
        Norm::L1 => project_l1_ball(v, epsilon),
    }
}

/// Sort-based ℓ1-ball projection: soft-threshold at the level `θ` that puts
/// the result on the sphere `‖·‖₁ = ε`.
fn project_l1_ball(v: &DVector<f64>, epsilon: f64) -> DVector<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= epsilon {
        return v.clone();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - epsilon) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.map(|x| sign(x) * (x.abs() - theta).max(0.0))
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    pub delta: DVector<f64>,
    /// The gradient vanished (or no coordinate could move) before the last step.
    pub degenerate: bool,
    pub steps: usize,
}

fn clip_into_box(x: &DVector<f64>, delta: &mut DVector<f64>, bounds: Option<(f64, f64)>) {
    if let Some((lo, hi)) = bounds {
        for (d, &xi) in delta.iter_mut().zip(x.iter()) {
            *d = (xi + *d).clamp(lo, hi) - xi;
        }
    }
}

fn random_start(n: usize, spec: &AttackSpec, seed: u64) -> DVector<f64> {
    let mut rng = rng_from_seed(seed);
    let radius = spec.epsilon * rng.random::<f64>();
    match spec.norm {
        Norm::Linf => DVector::from_fn(n, |_, _| spec.epsilon * (2.0 * rng.random::<f64>() - 1.0)),
        Norm::L2 => unit_sphere_sample(n, &mut rng) * radius,
        Norm::L1 => {
            let dir = unit_sphere_sample(n, &mut rng);
            let l1 = Norm::L1.of(&dir);
            dir * (radius / l1)
        }
    }
}

/// Iterates `δ ← Π(δ + α·step(∇ₓL(x + δ, y)))` for the configured number of
/// steps, clipping `x + δ` into the box after each step.
pub fn pgd_attack(params: &MlpParams, x: &DVector<f64>, y: usize, spec: &AttackSpec) -> Result<PgdOutcome> {
    pgd_attack_seeded(params, x, y, spec, spec.seed)
}

fn pgd_attack_seeded(
    params: &MlpParams,
    x: &DVector<f64>,
    y: usize,
    spec: &AttackSpec,
    seed: u64,
) -> Result<PgdOutcome> {
    spec.validate()?;
    let n = x.len();
    let mut delta = if spec.random_start {
        random_start(n, spec, seed)
    } else {
        DVector::zeros(n)
    };
    clip_into_box(x, &mut delta, spec.bounds);

    for step in 0..spec.iterations {
        let point = x + &delta;
        let g = params.loss_grad_input(&point, y)?;
        let allowed: Option<Vec<bool>> = match (spec.norm, spec.bounds) {
            (Norm::L1, Some((lo, hi))) => Some(
                (0..n)
                    .map(|i| (g[i] > 0.0 && point[i] < hi) || (g[i] < 0.0 && point[i] > lo))
                    .collect(),
            ),
            _ => None,
        };
        let dir = match unit_step(&g, spec.norm, spec.l1_coordinates, allowed.as_deref()) {
            Ok(d) if d.iter().any(|&v| v != 0.0) => d,
            Ok(_) | Err(Error::DegenerateGradient) => {
                return Ok(PgdOutcome { delta, degenerate: true, steps: step });
            }
            Err(e) => return Err(e),
        };
        delta = project_lp_ball(&(delta + dir * spec.step_size), spec.norm, spec.epsilon);
        clip_into_box(x, &mut delta, spec.bounds);
    }
    Ok(PgdOutcome {
        delta,
        degenerate: false,
        steps: spec.iterations,
    })
}

/// Per-sample seed for random starts inside a batch.
fn sample_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// PGD attack of every sample at its true label; column `j` of the result
/// perturbs column `j` of the dataset.
pub fn attack_batch(params: &MlpParams, dataset: &LabeledDataset, spec: &AttackSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let outcomes = par_map(dataset.len(), |j| {
        pgd_attack_seeded(params, &dataset.sample(j), dataset.labels[j], spec, sample_seed(spec.seed, j))
            .map_err(|e| Error::Sample { index: j, source: Box::new(e) })
    });
    let mut deltas = DMatrix::zeros(dataset.dim(), dataset.len());
    for (j, outcome) in outcomes.into_iter().enumerate() {
        deltas.set_column(j, &outcome?.delta);
    }
    Ok(deltas)
}
