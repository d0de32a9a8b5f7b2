//! Predictions from a block-sparse solution: signal class, attack type,
//! denoised input re-classified by the network, and the signal-only baseline.

use nalgebra::DVector;

use crate::dictionary::{BlockDictionary, BlockLabel};
use crate::linalg::argmin;
use crate::network::MlpParams;
use crate::solver::{active_set_homotopy, BlockSparseSolution, SolverConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub signal_class: usize,
    /// `None` when the attack dictionary is empty.
    pub attack_type: Option<usize>,
    pub denoised: DVector<f64>,
    /// Network prediction on the denoised input, when a network was given.
    pub network_class: Option<usize>,
    /// Residual for each signal block, indexed by block position.
    pub signal_residuals: Vec<f64>,
    /// Residual for each attack type `j` of the predicted class.
    pub attack_residuals: Vec<f64>,
}

/// Number of attack types `a` in an attack dictionary.
pub fn attack_type_count(d_a: &BlockDictionary) -> usize {
    d_a.blocks()
        .iter()
        .filter_map(|b| b.label.attack())
        .max()
        .map_or(0, |a| a + 1)
}

/// `î = argmin_i ‖x' − D_s[i]ĉ_s[i] − D_a ĉ_a‖`, returned as the class of the
/// minimizing block, with the residual of every signal block.
pub fn predict_signal_class(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    solution: &BlockSparseSolution,
    x: &DVector<f64>,
) -> Result<(usize, Vec<f64>)> {
    if d_s.block_count() == 0 {
        return Err(Error::invalid("signal dictionary has no blocks"));
    }
    let base = x - d_a.atoms() * &solution.c_a;
    let residuals: Vec<f64> = d_s
        .blocks()
        .iter()
        .map(|b| (&base - d_s.atoms().columns(b.start, b.len) * solution.c_s.rows(b.start, b.len)).norm())
        .collect();
    let best = argmin(&residuals).expect("at least one block");
    Ok((d_s.blocks()[best].label.class(), residuals))
}

/// `ĵ = argmin_j ‖x' − D_s ĉ_s − D_a[î][j]ĉ_a[î][j]‖`; a missing block
/// contributes nothing.
pub fn predict_attack_type(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    solution: &BlockSparseSolution,
    x: &DVector<f64>,
    class: usize,
) -> (Option<usize>, Vec<f64>) {
    let base = x - d_s.atoms() * &solution.c_s;
    let residuals: Vec<f64> = (0..attack_type_count(d_a))
        .map(|attack| match d_a.find(BlockLabel::Attack { class, attack }) {
            Some(b) => {
                let blk = d_a.blocks()[b];
                (&base - d_a.view(b) * solution.c_a.rows(blk.start, blk.len)).norm()
            }
            None => base.norm(),
        })
        .collect();
    (argmin(&residuals), residuals)
}

/// `x̂ = D_s[î]ĉ_s[î]` and the network's class for it.
///
/// With `rescale`, `x̂` is multiplied by the mean original column norm over
/// the block's nonzero coefficients; use it when `x'` itself was normalized
/// and the network expects raw-scale input.
pub fn denoise_and_reclassify(
    d_s: &BlockDictionary,
    solution: &BlockSparseSolution,
    class: usize,
    params: &MlpParams,
    rescale: bool,
) -> Result<(DVector<f64>, usize)> {
    let x_hat = denoise(d_s, solution, class, rescale)?;
    let predicted = params.predict(&x_hat)?;
    Ok((x_hat, predicted))
}

fn denoise(d_s: &BlockDictionary, solution: &BlockSparseSolution, class: usize, rescale: bool) -> Result<DVector<f64>> {
    let b = d_s
        .find(BlockLabel::Class(class))
        .ok_or_else(|| Error::UnknownBlock(BlockLabel::Class(class).to_string()))?;
    let blk = d_s.blocks()[b];
    let coeffs = solution.c_s.rows(blk.start, blk.len);
    let mut x_hat = d_s.view(b) * coeffs;
    if rescale {
        let support: Vec<f64> = (0..blk.len)
            .filter(|&k| coeffs[k] != 0.0)
            .map(|k| d_s.original_norms()[blk.start + k])
            .collect();
        if !support.is_empty() {
            x_hat *= support.iter().sum::<f64>() / support.len() as f64;
        }
    }
    Ok(x_hat)
}

/// Runs the homotopy on `x'` and applies every prediction rule.
pub fn classify(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    x: &DVector<f64>,
    params: Option<&MlpParams>,
    cfg: &SolverConfig,
) -> Result<(Prediction, BlockSparseSolution)> {
    let solution = active_set_homotopy(d_s, d_a, x, cfg)?;
    let (signal_class, signal_residuals) = predict_signal_class(d_s, d_a, &solution, x)?;
    let (attack_type, attack_residuals) = predict_attack_type(d_s, d_a, &solution, x, signal_class);
    let denoised = denoise(d_s, &solution, signal_class, false)?;
    let network_class = params.map(|p| p.predict(&denoised)).transpose()?;
    Ok((
        Prediction {
            signal_class,
            attack_type,
            denoised,
            network_class,
            signal_residuals,
            attack_residuals,
        },
        solution,
    ))
}

/// Signal-only baseline: the homotopy without an attack dictionary followed
/// by the signal-class rule.
pub fn bsc_baseline(d_s: &BlockDictionary, x: &DVector<f64>, cfg: &SolverConfig) -> Result<usize> {
    let empty = BlockDictionary::empty(d_s.dim());
    let solution = active_set_homotopy(d_s, &empty, x, cfg)?;
    Ok(predict_signal_class(d_s, &empty, &solution, x)?.0)
}
