//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::Rng;

/// Relative singular-value cutoff used when extracting a span basis.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis of the column space of `a`.
///
/// Householder QR with column pivoting by largest remaining norm; stops once
/// the largest remaining column norm falls below `RANK_TOLERANCE` times the
/// first pivot. A zero matrix yields an `n × 0` basis.
pub fn orthonormal_span(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = a.shape();
    let mut w = a.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::new();
    let mut first_pivot = 0.0;
    for k in 0..n.min(m) {
        let (mut best, mut best_norm) = (k, -1.0);
        for j in k..m {
            let norm = w.view((k, j), (n - k, 1)).norm();
            if norm > best_norm {
                best = j;
                best_norm = norm;
            }
        }
        if k == 0 {
            first_pivot = best_norm;
        }
        if best_norm == 0.0 || best_norm <= RANK_TOLERANCE * first_pivot {
            break;
        }
        w.swap_columns(k, best);
        let mut v = w.view((k, k), (n - k, 1)).into_owned().column(0).into_owned();
        let alpha = if v[0] >= 0.0 { -best_norm } else { best_norm };
        v[0] -= alpha;
        let vn = v.norm();
        if vn > 0.0 {
            v /= vn;
            let mut trailing = w.view_mut((k, k), (n - k, m - k));
            let proj = trailing.tr_mul(&v);
            trailing -= &v * proj.transpose() * 2.0;
        }
        reflectors.push(v);
    }
    let rank = reflectors.len();
    let mut q = DMatrix::zeros(n, rank);
    for j in 0..rank {
        q[(j, j)] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        let mut block = q.view_mut((k, 0), (n - k, rank));
        let proj = block.tr_mul(v);
        block -= v * proj.transpose() * 2.0;
    }
    q
}

/// A random orthonormal `n × n` frame (QR of a Gaussian matrix, sign-fixed so
/// that `R` has a positive diagonal).
pub fn random_orthonormal_frame(n: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    // Column-major fill order keeps results independent of matrix layout quirks.
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

pub fn gaussian_vector(len: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Uniform sample from the unit sphere in `R^len`.
pub fn unit_sphere_sample(len: usize, rng: &mut Rng) -> DVector<f64> {
    loop {
        let g = gaussian_vector(len, rng);
        let norm = g.norm();
        if norm > 1e-300 {
            return g / norm;
        }
    }
}

/// Residual norm of `v` after orthogonal projection onto `span(basis)`.
///
/// `basis` must have orthonormal columns.
pub fn projection_residual(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    let coeffs = basis.tr_mul(v);
    (v - basis * coeffs).norm()
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Index of the smallest value; ties resolve to the smallest index.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v >= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn frame_is_orthonormal() {
        let mut rng = rng_from_seed(3);
        let q = random_orthonormal_frame(12, &mut rng);
        let gram = q.tr_mul(&q);
        assert!((gram - DMatrix::identity(12, 12)).amax() < 1e-12);
    }

    #[test]
    fn span_of_rank_deficient_matrix() {
        let mut rng = rng_from_seed(5);
        let a = gaussian_matrix(10, 3, &mut rng);
        // Two extra columns that are combinations of the first three.
        let mut wide = DMatrix::zeros(10, 5);
        wide.columns_mut(0, 3).copy_from(&a);
        wide.set_column(3, &(a.column(0) + a.column(1)));
        wide.set_column(4, &(a.column(2) * 2.0));
        let basis = orthonormal_span(&wide);
        assert_eq!(basis.ncols(), 3);
        for j in 0..5 {
            let col = wide.column(j).into_owned();
            assert!(projection_residual(&basis, &col) < 1e-10);
        }
    }

    #[test]
    fn span_of_two_rank_deficient_blocks_is_accurate() {
        // Two blocks of six columns, each in its own 3-D subspace of R^40.
        let mut rng = rng_from_seed(9);
        let frame = random_orthonormal_frame(40, &mut rng);
        let mut a = DMatrix::zeros(40, 12);
        a.columns_mut(0, 6).copy_from(&(frame.columns(0, 3) * gaussian_matrix(3, 6, &mut rng)));
        a.columns_mut(6, 6).copy_from(&(frame.columns(3, 3) * gaussian_matrix(3, 6, &mut rng)));
        let basis = orthonormal_span(&a);
        assert_eq!(basis.ncols(), 6);
        for j in 0..12 {
            assert!(projection_residual(&basis, &a.column(j).into_owned()) < 1e-13);
        }
    }

    #[test]
    fn zero_matrix_has_empty_span() {
        let basis = orthonormal_span(&DMatrix::zeros(4, 3));
        assert_eq!(basis.shape(), (4, 0));
    }

    #[test]
    fn arg_extrema_break_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmin(&[2.0, 0.5, 0.5]), Some(1));
        assert_eq!(argmax(&[]), None);
    }
}
