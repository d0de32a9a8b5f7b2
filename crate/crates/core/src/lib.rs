//! Structured block-sparse recovery of adversarially perturbed signals.
//!
//! An attacked input `x' = x + δ` is modeled as `D_s c_s + D_a c_a`, where
//! `D_s` holds clean training samples (one block per class) and `D_a` holds
//! ℓp attacks evaluated at training samples (one block per class and attack
//! type). Solving a group-sparse program over both dictionaries recovers the
//! class of the clean signal and the type of the attack at the same time.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`] / [`idx`]: synthetic union-of-subspaces data and IDX images.
//! - [`network`]: a small ReLU classifier with manual backpropagation.
//! - [`attacks`]: one-step and PGD attacks for ℓ1, ℓ2 and ℓ∞ balls.
//! - [`dictionary`]: block-partitioned, column-normalized dictionaries.
//! - [`solver`]: group-lasso prox solver, active-set homotopy, continuation.
//! - [`classify`]: signal class / attack type prediction and denoising.
//! - [`geometry`]: covering radius, angular distances and recovery margins.
//! - [`container`]: the binary container used for checkpoints and matrices.

pub mod attacks;
pub mod classify;
pub mod container;
pub mod data;
pub mod dictionary;
mod error;
pub mod geometry;
pub mod idx;
pub mod linalg;
pub mod network;
pub mod solver;

pub use error::{Error, Result};

/// Seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Creates the crate's deterministic generator from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Parallel map over `0..len` that preserves index order in the output.
pub(crate) fn par_map<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}
