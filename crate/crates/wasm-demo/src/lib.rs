//! Browser bindings for three small demos:
//!
//! - `lp_attack`: ℓp-ball projection and the one-step attack in the plane.
//! - `prc_geometry`: recovery margin of a toy 3-D dictionary as one block tilts
//!   towards the target span.
//! - `recover`: block norms of the minimum group-norm representation for the
//!   same toy dictionary.
//!
//! Results cross the boundary as flat `Vec<f64>`s (typed arrays in JS).

use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

use sbsr::attacks::{one_step_attack, project_lp_ball, Norm};
use sbsr::dictionary::{BlockDictionary, BlockLabel};
use sbsr::geometry::prc_check;
use sbsr::solver::{solve_constrained, SolverConfig};

fn parse_norm(name: &str) -> Result<Norm, String> {
    name.parse().map_err(|e: sbsr::Error| e.to_string())
}

/// `[proj_x, proj_y, step_x, step_y]`: the projection of `v` onto the ℓp ball
/// of radius `eps`, and the one-step attack of size `eps` along gradient `g`.
/// The step is `(0, 0)` when `g` gives no direction.
pub fn lp_attack_native(v: [f64; 2], g: [f64; 2], norm: &str, eps: f64) -> Result<[f64; 4], String> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err("eps must be positive".into());
    }
    let norm = parse_norm(norm)?;
    let p = project_lp_ball(&DVector::from_row_slice(&v), norm, eps);
    let s = one_step_attack(&DVector::from_row_slice(&g), norm, eps).unwrap_or_else(|_| DVector::zeros(2));
    Ok([p[0], p[1], s[0], s[1]])
}

/// Toy dictionary in R³: class 0 is `e₁`, attack (0, 0) is `e₂`, and class 1
/// is `e₃` rotated by `tilt` radians towards `e₁`.
pub fn toy_dictionaries(tilt: f64) -> (BlockDictionary, BlockDictionary) {
    let e = |i: usize| DMatrix::from_fn(3, 1, |r, _| if r == i { 1.0 } else { 0.0 });
    let tilted = e(2) * tilt.cos() + e(0) * tilt.sin();
    let d_s = BlockDictionary::from_blocks(3, vec![(BlockLabel::Class(0), e(0)), (BlockLabel::Class(1), tilted)], false)
        .expect("fixed toy blocks");
    let d_a = BlockDictionary::from_blocks(3, vec![(BlockLabel::Attack { class: 0, attack: 0 }, e(1))], false)
        .expect("fixed toy blocks");
    (d_s, d_a)
}

/// `[covering_radius, theta_min, prc_margin]` for target pair (0, 0).
pub fn prc_geometry_native(tilt: f64, samples: usize) -> Result<[f64; 3], String> {
    let (d_s, d_a) = toy_dictionaries(tilt);
    let r = prc_check(&d_s, &d_a, 0, 0, samples.max(1), 0).map_err(|e| e.to_string())?;
    Ok([r.covering_radius, r.theta_min, r.prc_margin])
}

/// Block norms `[class 0, class 1, attack (0, 0)]` of the minimum group-norm
/// representation of `signal·e₁ + attack·e₂`.
pub fn recover_native(tilt: f64, signal: f64, attack: f64) -> Result<[f64; 3], String> {
    let (d_s, d_a) = toy_dictionaries(tilt);
    let x = DVector::from_row_slice(&[signal, attack, 0.0]);
    let sol = solve_constrained(&d_s, &d_a, &x, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let s = sol.signal_block_norms(&d_s);
    let a = sol.attack_block_norms(&d_a);
    Ok([s[0], s[1], a[0]])
}

#[wasm_bindgen]
pub fn lp_attack(vx: f64, vy: f64, gx: f64, gy: f64, norm: &str, eps: f64) -> Result<Vec<f64>, JsError> {
    lp_attack_native([vx, vy], [gx, gy], norm, eps).map(|r| r.to_vec()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn prc_geometry(tilt: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    prc_geometry_native(tilt, samples).map(|r| r.to_vec()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn recover(tilt: f64, signal: f64, attack: f64) -> Result<Vec<f64>, JsError> {
    recover_native(tilt, signal, attack).map(|r| r.to_vec()).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn planar_projections_and_steps() {
        let [px, py, sx, sy] = lp_attack_native([3.0, 4.0], [1.0, -2.0], "l2", 1.0).unwrap();
        assert!((px - 0.6).abs() < 1e-12 && (py - 0.8).abs() < 1e-12);
        let n = (5.0f64).sqrt();
        assert!((sx - 1.0 / n).abs() < 1e-12 && (sy + 2.0 / n).abs() < 1e-12);

        let r = lp_attack_native([3.0, 4.0], [1.0, -2.0], "linf", 1.0).unwrap();
        assert_eq!(r, [1.0, 1.0, 1.0, -1.0]);
        let r = lp_attack_native([3.0, 1.0], [1.0, -2.0], "l1", 1.0).unwrap();
        assert_eq!(r, [1.0, 0.0, 0.0, -1.0]);
        assert_eq!(lp_attack_native([0.0, 0.0], [0.0, 0.0], "l2", 1.0).unwrap()[2..], [0.0, 0.0]);
        assert!(lp_attack_native([0.0, 0.0], [1.0, 0.0], "l3", 1.0).is_err());
        assert!(lp_attack_native([0.0, 0.0], [1.0, 0.0], "l2", 0.0).is_err());
    }

    #[test]
    fn untilted_toy_has_quarter_turn_margin() {
        // Target blocks e₁ and e₂: covering radius π/4; complement e₃ is
        // orthogonal, so θ = π/2.
        let [gamma, theta, margin] = prc_geometry_native(0.0, 2_000).unwrap();
        assert!((gamma - FRAC_PI_4).abs() < 1e-3, "{gamma}");
        assert!((theta - FRAC_PI_2).abs() < 1e-9);
        assert!((margin - FRAC_PI_4).abs() < 1e-3);
    }

    #[test]
    fn tilting_past_the_covering_radius_flips_the_margin() {
        // θ = π/2 − tilt, so the margin crosses zero at tilt = π/4.
        let [_, theta, margin] = prc_geometry_native(0.6, 2_000).unwrap();
        assert!((theta - (FRAC_PI_2 - 0.6)).abs() < 1e-3);
        assert!(margin > 0.0);
        assert!(prc_geometry_native(1.0, 2_000).unwrap()[2] < 0.0);
    }

    #[test]
    fn recovery_uses_target_blocks() {
        let [s0, s1, a] = recover_native(0.3, 1.0, 0.5).unwrap();
        assert!((s0 - 1.0).abs() < 1e-5 && (a - 0.5).abs() < 1e-5, "{s0} {a}");
        assert!(s1 < 1e-5);
    }
}
