//! Labeled datasets: synthetic unions of subspaces, synthetic digit-like
//! images, and stratified train/test splitting.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{gaussian_matrix, random_orthonormal_frame};
use crate::{rng_from_seed, Error, Result};

/// Feature vectors stored as columns, with one class label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != features.ncols() {
            return Err(Error::invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                features.ncols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn empty(dim: usize, class_count: usize) -> Self {
        Self {
            features: DMatrix::zeros(dim, 0),
            labels: Vec::new(),
            class_count,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn sample(&self, index: usize) -> DVector<f64> {
        self.features.column(index).into_owned()
    }

    /// Column indices of every sample of `class`, in dataset order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset made of the given columns, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let features = DMatrix::from_fn(self.dim(), indices.len(), |i, j| {
            self.features[(i, indices[j])]
        });
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Keeps at most `per_class` samples of each class (first ones in order).
    pub fn truncate_per_class(&self, per_class: usize) -> Self {
        let mut keep = Vec::new();
        for class in 0..self.class_count {
            keep.extend(self.class_indices(class).into_iter().take(per_class));
        }
        keep.sort_unstable();
        self.select(&keep)
    }
}

/// Parameters of a synthetic union-of-subspaces dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub ambient_dim: usize,
    pub class_count: usize,
    pub subspace_dim: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Draw all class bases from disjoint columns of one orthonormal frame.
    pub orthogonal: bool,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ambient_dim == 0 || self.class_count == 0 || self.subspace_dim == 0 {
            return Err(Error::invalid("dimensions and class count must be positive"));
        }
        if self.subspace_dim > self.ambient_dim {
            return Err(Error::invalid(format!(
                "subspace dimension {} exceeds ambient dimension {}",
                self.subspace_dim, self.ambient_dim
            )));
        }
        if self.orthogonal && self.class_count * self.subspace_dim > self.ambient_dim {
            return Err(Error::invalid(format!(
                "{} orthogonal subspaces of dimension {} do not fit in dimension {}",
                self.class_count, self.subspace_dim, self.ambient_dim
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

/// A generated union-of-subspaces dataset together with its class bases.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: LabeledDataset,
    /// Orthonormal `n × d` basis per class.
    pub bases: Vec<DMatrix<f64>>,
}

/// Samples `U_i w + σ ε` for every class `i`, with standard normal `w` and `ε`.
///
/// Samples are stored class-major. The same spec always yields bit-identical
/// output.
pub fn generate_union_of_subspaces(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let n = spec.ambient_dim;
    let d = spec.subspace_dim;
    let mut rng = rng_from_seed(spec.seed);

    let bases: Vec<DMatrix<f64>> = if spec.orthogonal {
        let frame = random_orthonormal_frame(n, &mut rng);
        (0..spec.class_count)
            .map(|i| frame.columns(i * d, d).into_owned())
            .collect()
    } else {
        (0..spec.class_count)
            .map(|_| {
                let q = gaussian_matrix(n, d, &mut rng).qr().q();
                q.columns(0, d).into_owned()
            })
            .collect()
    };

    let total = spec.class_count * spec.samples_per_class;
    let mut features = DMatrix::zeros(n, total);
    let mut labels = Vec::with_capacity(total);
    for (class, basis) in bases.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let w = crate::linalg::gaussian_vector(d, &mut rng);
            let mut x = basis * w;
            if spec.noise_sigma > 0.0 {
                for v in x.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v += spec.noise_sigma * e;
                }
            }
            features.set_column(class * spec.samples_per_class + s, &x);
            labels.push(class);
        }
    }

    Ok(SyntheticData {
        dataset: LabeledDataset::new(features, labels, spec.class_count)?,
        bases,
    })
}

/// Parameters of the synthetic digit-like image generator.
///
/// Each image is a `side × side` grid of intensities in `[0, 1]`. Every class
/// owns a handful of strokes drawn from a shared pool; a sample is a random
/// positive mixture of its class strokes plus pixel noise, clipped to the box.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitsSpec {
    pub side: usize,
    pub class_count: usize,
    pub samples_per_class: usize,
    pub stroke_pool: usize,
    pub strokes_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DigitsSpec {
    fn default() -> Self {
        Self {
            side: 10,
            class_count: 10,
            samples_per_class: 120,
            stroke_pool: 16,
            strokes_per_class: 4,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

fn render_stroke(side: usize, a: (f64, f64), b: (f64, f64), width: f64) -> DVector<f64> {
    let mut img = DVector::zeros(side * side);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    for r in 0..side {
        for c in 0..side {
            let (px, py) = (c as f64, r as f64);
            let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
            let dist2 = qx * qx + qy * qy;
            img[r * side + c] = (-dist2 / (2.0 * width * width)).exp();
        }
    }
    img
}

/// Generates digit-like images (class-major order).
pub fn generate_digits(spec: &DigitsSpec) -> Result<LabeledDataset> {
    if spec.side < 2 || spec.class_count == 0 || spec.strokes_per_class == 0 {
        return Err(Error::invalid("degenerate digits spec"));
    }
    if spec.strokes_per_class > spec.stroke_pool {
        return Err(Error::invalid("strokes per class exceed the stroke pool"));
    }
    let mut rng = rng_from_seed(spec.seed);
    let span = (spec.side - 1) as f64;
    let pool: Vec<DVector<f64>> = (0..spec.stroke_pool)
        .map(|_| {
            let a = (rng.random::<f64>() * span, rng.random::<f64>() * span);
            let b = (rng.random::<f64>() * span, rng.random::<f64>() * span);
            render_stroke(spec.side, a, b, 0.8)
        })
        .collect();

    // Distinct stroke subsets per class.
    let mut subsets: Vec<Vec<usize>> = Vec::with_capacity(spec.class_count);
    let mut all: Vec<usize> = (0..spec.stroke_pool).collect();
    let mut attempts = 0;
    while subsets.len() < spec.class_count {
        all.shuffle(&mut rng);
        let mut pick = all[..spec.strokes_per_class].to_vec();
        pick.sort_unstable();
        attempts += 1;
        if !subsets.contains(&pick) || attempts > 10_000 {
            subsets.push(pick);
        }
    }

    let n = spec.side * spec.side;
    let total = spec.class_count * spec.samples_per_class;
    let mut features = DMatrix::zeros(n, total);
    let mut labels = Vec::with_capacity(total);
    for (class, strokes) in subsets.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let mut x = DVector::zeros(n);
            for &k in strokes {
                let w = 0.5 + 0.5 * rng.random::<f64>();
                x.axpy(w, &pool[k], 1.0);
            }
            for v in x.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v = (*v + spec.noise_sigma * e).clamp(0.0, 1.0);
            }
            features.set_column(class * spec.samples_per_class + s, &x);
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, spec.class_count)
}

/// Mutually orthogonal signal and attack subspaces: one `d`-dimensional
/// subspace per class and one per (class, attack type), all taken from
/// disjoint columns of a single random orthonormal frame.
#[derive(Debug, Clone)]
pub struct SubspaceAttackModel {
    pub signal_bases: Vec<DMatrix<f64>>,
    /// `attack_bases[i][j]` is the subspace of attack type `j` on class `i`.
    pub attack_bases: Vec<Vec<DMatrix<f64>>>,
}

impl SubspaceAttackModel {
    /// Requires `(r + r·a)·d ≤ n`.
    pub fn orthogonal(n: usize, r: usize, a: usize, d: usize, seed: u64) -> Result<Self> {
        if r == 0 || d == 0 {
            return Err(Error::invalid("class count and subspace dimension must be positive"));
        }
        let needed = (r + r * a) * d;
        if needed > n {
            return Err(Error::invalid(format!(
                "{} orthogonal subspaces of dimension {d} do not fit in dimension {n}",
                r + r * a
            )));
        }
        let frame = random_orthonormal_frame(n, &mut rng_from_seed(seed));
        let mut next = 0;
        let mut take = || {
            let b = frame.columns(next, d).into_owned();
            next += d;
            b
        };
        let signal_bases = (0..r).map(|_| take()).collect();
        let attack_bases = (0..r).map(|_| (0..a).map(|_| take()).collect()).collect();
        Ok(Self { signal_bases, attack_bases })
    }

    pub fn dim(&self) -> usize {
        self.signal_bases[0].nrows()
    }

    pub fn class_count(&self) -> usize {
        self.signal_bases.len()
    }

    pub fn attack_count(&self) -> usize {
        self.attack_bases.first().map_or(0, |v| v.len())
    }

    /// `count` random points `U w` (standard normal `w`) of a subspace, as columns.
    pub fn points(basis: &DMatrix<f64>, count: usize, rng: &mut crate::Rng) -> DMatrix<f64> {
        basis * gaussian_matrix(basis.ncols(), count, rng)
    }
}

/// Stratified split into `(train, test)`.
///
/// Per class, `floor(count · (1 − train_fraction))` samples go to the test
/// part and the remainder to train. Within each part the original order is
/// preserved.
pub fn split(
    dataset: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..dataset.class_count {
        let mut idx = dataset.class_indices(class);
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has fewer than 2 samples"
            )));
        }
        idx.shuffle(&mut rng);
        // The small epsilon absorbs representation error such as 10 · 0.2.
        let n_test = (idx.len() as f64 * (1.0 - train_fraction) + 1e-9).floor() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.select(&train), dataset.select(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::projection_residual;

    fn spec(n: usize, r: usize, d: usize, per: usize, sigma: f64, orth: bool) -> SyntheticSpec {
        SyntheticSpec {
            ambient_dim: n,
            class_count: r,
            subspace_dim: d,
            samples_per_class: per,
            noise_sigma: sigma,
            seed: 11,
            orthogonal: orth,
        }
    }

    #[test]
    fn noiseless_rank_one_samples_lie_on_class_line() {
        let data = generate_union_of_subspaces(&spec(8, 3, 1, 1, 0.0, false)).unwrap();
        for j in 0..data.dataset.len() {
            let class = data.dataset.labels[j];
            let x = data.dataset.sample(j);
            assert!(projection_residual(&data.bases[class], &x) < 1e-12);
        }
    }

    #[test]
    fn orthogonal_bases_are_mutually_orthogonal() {
        let data = generate_union_of_subspaces(&spec(100, 4, 5, 2, 0.0, true)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let g = data.bases[i].tr_mul(&data.bases[j]);
                let target = if i == j { DMatrix::identity(5, 5) } else { DMatrix::zeros(5, 5) };
                assert!((g - target).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(generate_union_of_subspaces(&spec(4, 2, 5, 1, 0.0, false)).is_err());
        assert!(generate_union_of_subspaces(&spec(10, 3, 4, 1, 0.0, true)).is_err());
        assert!(generate_union_of_subspaces(&spec(10, 2, 4, 1, -1.0, false)).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(20, 3, 4, 10, 0.01, false);
        let a = generate_union_of_subspaces(&s).unwrap();
        let b = generate_union_of_subspaces(&s).unwrap();
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn noiseless_samples_have_zero_residual() {
        let data = generate_union_of_subspaces(&spec(30, 3, 4, 20, 0.0, false)).unwrap();
        for j in 0..data.dataset.len() {
            let class = data.dataset.labels[j];
            assert!(projection_residual(&data.bases[class], &data.dataset.sample(j)) < 1e-10);
        }
    }

    #[test]
    fn split_counts_follow_rounding_rule() {
        let data = generate_union_of_subspaces(&spec(5, 3, 1, 10, 0.0, false)).unwrap();
        let (train, test) = split(&data.dataset, 0.8, 1).unwrap();
        for class in 0..3 {
            assert_eq!(train.class_indices(class).len(), 8);
            assert_eq!(test.class_indices(class).len(), 2);
        }

        let one = generate_union_of_subspaces(&spec(5, 1, 1, 101, 0.0, false)).unwrap();
        let (train, test) = split(&one.dataset, 0.5, 1).unwrap();
        assert_eq!((train.len(), test.len()), (51, 50));
    }

    #[test]
    fn split_is_a_deterministic_permutation() {
        let data = generate_union_of_subspaces(&spec(6, 2, 2, 9, 0.1, false)).unwrap();
        let (a_train, a_test) = split(&data.dataset, 0.6, 4).unwrap();
        let (b_train, b_test) = split(&data.dataset, 0.6, 4).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);

        let mut cols: Vec<Vec<u64>> = Vec::new();
        for part in [&a_train, &a_test] {
            for j in 0..part.len() {
                cols.push(part.sample(j).iter().map(|v| v.to_bits()).collect());
            }
        }
        let mut orig: Vec<Vec<u64>> = (0..data.dataset.len())
            .map(|j| data.dataset.sample(j).iter().map(|v| v.to_bits()).collect())
            .collect();
        cols.sort();
        orig.sort();
        assert_eq!(cols, orig);
    }

    #[test]
    fn split_rejects_singleton_class_and_bad_fraction() {
        let data = generate_union_of_subspaces(&spec(5, 2, 1, 1, 0.0, false)).unwrap();
        assert!(split(&data.dataset, 0.5, 0).is_err());
        let data = generate_union_of_subspaces(&spec(5, 2, 1, 4, 0.0, false)).unwrap();
        assert!(split(&data.dataset, 1.0, 0).is_err());
        assert!(split(&data.dataset, 0.0, 0).is_err());
    }

    #[test]
    fn digits_live_in_the_unit_box() {
        let d = generate_digits(&DigitsSpec {
            samples_per_class: 5,
            ..DigitsSpec::default()
        })
        .unwrap();
        assert_eq!(d.dim(), 100);
        assert_eq!(d.len(), 50);
        assert!(d.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
