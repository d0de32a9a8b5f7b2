//! Shared pipeline stages: data loading, dictionaries, test attacks and
//! per-sample evaluation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use sbsr::attacks::{attack_batch, AttackSpec};
use sbsr::classify::{bsc_baseline, classify};
use sbsr::data::{generate_digits, generate_union_of_subspaces, split, DigitsSpec, LabeledDataset, SubspaceAttackModel, SyntheticSpec};
use sbsr::dictionary::{build_attack_dict, build_signal_dict, BlockDictionary, BlockLabel};
use sbsr::idx::{read_idx_file, to_dataset};
use sbsr::linalg::gaussian_vector;
use sbsr::network::MlpParams;
use sbsr::rng_from_seed;
use sbsr::solver::SolverConfig;

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::error::CliError;

/// Seed offsets that keep the independent random streams apart.
const SPLIT_STREAM: u64 = 0x5b1e_0001;
const MODEL_POINTS_STREAM: u64 = 0x5b1e_0002;
const MODEL_ATTACK_STREAM: u64 = 0x5b1e_0003;

pub struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Present for `attack_model` datasets.
    pub model: Option<SubspaceAttackModel>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let seed = cfg.seed;
    let fraction = cfg.split.train_fraction;
    let split_seed = seed ^ SPLIT_STREAM;
    let (train, test, model) = match &cfg.dataset {
        DatasetConfig::Subspaces { ambient_dim, class_count, subspace_dim, samples_per_class, noise_sigma, orthogonal } => {
            let spec = SyntheticSpec {
                ambient_dim: *ambient_dim,
                class_count: *class_count,
                subspace_dim: *subspace_dim,
                samples_per_class: *samples_per_class,
                noise_sigma: *noise_sigma,
                seed,
                orthogonal: *orthogonal,
            };
            let data = generate_union_of_subspaces(&spec)?.dataset;
            let (tr, te) = split(&data, fraction, split_seed)?;
            (tr, te, None)
        }
        DatasetConfig::Digits { side, class_count, samples_per_class, stroke_pool, strokes_per_class, noise_sigma } => {
            let spec = DigitsSpec {
                side: *side,
                class_count: *class_count,
                samples_per_class: *samples_per_class,
                stroke_pool: *stroke_pool,
                strokes_per_class: *strokes_per_class,
                noise_sigma: *noise_sigma,
                seed,
            };
            let data = generate_digits(&spec)?;
            let (tr, te) = split(&data, fraction, split_seed)?;
            (tr, te, None)
        }
        DatasetConfig::Idx { train_images, train_labels, test_images, test_labels, class_count } => {
            let paths = [Some(train_images), Some(train_labels), test_images.as_ref(), test_labels.as_ref()];
            for p in paths.into_iter().flatten() {
                if !p.exists() {
                    return Err(CliError::Usage(format!("dataset file not found: {}", p.display())));
                }
            }
            let read = |images: &std::path::Path, labels: &std::path::Path| -> Result<LabeledDataset, CliError> {
                let ds = to_dataset(&read_idx_file(images)?, &read_idx_file(labels)?, *class_count);
                ds.map_err(|e| CliError::Data(e.to_string()))
            };
            let data = read(train_images, train_labels)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => (data, read(ti, tl)?, None),
                (None, None) => {
                    let (tr, te) = split(&data, fraction, split_seed)?;
                    (tr, te, None)
                }
                _ => return Err(CliError::Usage("test_images and test_labels go together".into())),
            }
        }
        DatasetConfig::AttackModel { ambient_dim, class_count, subspace_dim, samples_per_class } => {
            let model =
                SubspaceAttackModel::orthogonal(*ambient_dim, *class_count, cfg.attacks.len(), *subspace_dim, seed)?;
            let mut rng = rng_from_seed(seed ^ MODEL_POINTS_STREAM);
            let total = class_count * samples_per_class;
            let mut features = DMatrix::zeros(*ambient_dim, total);
            let mut labels = Vec::with_capacity(total);
            for (i, basis) in model.signal_bases.iter().enumerate() {
                let pts = SubspaceAttackModel::points(basis, *samples_per_class, &mut rng);
                features.columns_mut(i * samples_per_class, *samples_per_class).copy_from(&pts);
                labels.extend(std::iter::repeat_n(i, *samples_per_class));
            }
            let data = LabeledDataset::new(features, labels, *class_count)?;
            let (tr, te) = split(&data, fraction, split_seed)?;
            (tr, te, Some(model))
        }
    };
    let train = match cfg.split.train_per_class {
        Some(k) => train.truncate_per_class(k),
        None => train,
    };
    let test = match cfg.split.test_per_class {
        Some(k) => test.truncate_per_class(k),
        None => test,
    };
    Ok(Prepared { train, test, model })
}

/// The first `count` test samples in class round-robin order, returned as
/// sorted indices.
pub fn test_subset(test: &LabeledDataset, count: usize) -> Vec<usize> {
    let per_class: Vec<Vec<usize>> = (0..test.class_count).map(|c| test.class_indices(c)).collect();
    let longest = per_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut picked: Vec<usize> = (0..longest)
        .flat_map(|k| per_class.iter().filter_map(move |idx| idx.get(k).copied()))
        .take(count)
        .collect();
    picked.sort_unstable();
    picked
}

pub fn build_dictionaries(
    cfg: &ExperimentConfig,
    data: &Prepared,
    params: &MlpParams,
) -> Result<(BlockDictionary, BlockDictionary), CliError> {
    let dict_cfg = cfg.dict_config();
    let mut d_s = build_signal_dict(&data.train, &dict_cfg)?;
    if cfg.evaluation.corrupt_duplicate {
        let from = d_s
            .find(BlockLabel::Class(0))
            .ok_or_else(|| CliError::Data("corrupt_duplicate needs a class-0 block".into()))?;
        let to = d_s
            .find(BlockLabel::Class(1))
            .ok_or_else(|| CliError::Data("corrupt_duplicate needs a class-1 block".into()))?;
        let atom = d_s.view(from).column(0).into_owned();
        d_s = d_s.with_extra_column(to, &atom)?;
    }
    let d_a = match &data.model {
        None => build_attack_dict(&data.train, params, &cfg.attack_specs()?, &dict_cfg)?,
        Some(model) => {
            let mut rng = rng_from_seed(cfg.seed ^ MODEL_ATTACK_STREAM);
            let mut raw = Vec::new();
            for (class, per_class) in model.attack_bases.iter().enumerate() {
                for (attack, u) in per_class.iter().enumerate() {
                    let pts = SubspaceAttackModel::points(u, dict_cfg.per_class_count, &mut rng);
                    raw.push((BlockLabel::Attack { class, attack }, pts));
                }
            }
            BlockDictionary::from_blocks(model.dim(), raw, dict_cfg.drop_zero_columns)?
        }
    };
    Ok((d_s, d_a))
}

/// Attack `j` at `scale` times its configured strength, applied to the
/// chosen test samples. Returns one perturbation per column.
pub fn test_attacks(
    cfg: &ExperimentConfig,
    data: &Prepared,
    params: &MlpParams,
    subset: &LabeledDataset,
    j: usize,
    scale: f64,
) -> Result<DMatrix<f64>, CliError> {
    let base = cfg.attacks[j].to_spec(cfg.seed.wrapping_add(j as u64))?;
    if scale == 0.0 || subset.is_empty() {
        return Ok(DMatrix::zeros(subset.dim(), subset.len()));
    }
    match &data.model {
        None => {
            let spec = AttackSpec { epsilon: base.epsilon * scale, step_size: base.step_size * scale, ..base };
            Ok(attack_batch(params, subset, &spec)?)
        }
        Some(model) => {
            // ℓ2-scaled draws from the attack subspace of the sample's class.
            let mut rng = rng_from_seed(cfg.seed ^ MODEL_ATTACK_STREAM ^ ((j as u64 + 1) << 32));
            let mut deltas = DMatrix::zeros(subset.dim(), subset.len());
            for k in 0..subset.len() {
                let u = &model.attack_bases[subset.labels[k]][j];
                let d = u * gaussian_vector(u.ncols(), &mut rng);
                deltas.set_column(k, &(d.normalize() * (base.epsilon * scale)));
            }
            Ok(deltas)
        }
    }
}

/// Outcome of every prediction rule on one attacked sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub undefended: usize,
    pub bsc: usize,
    pub sbsc: usize,
    pub sbsad: Option<usize>,
    pub sbsc_cnn: usize,
    pub signal_residuals: Vec<f64>,
    pub attack_residuals: Vec<f64>,
}

pub fn evaluate_sample(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    params: &MlpParams,
    x: &DVector<f64>,
    solver: &SolverConfig,
) -> Result<SampleOutcome, CliError> {
    let undefended = params.predict(x)?;
    let bsc = bsc_baseline(d_s, x, solver)?;
    let (pred, _) = classify(d_s, d_a, x, Some(params), solver)?;
    Ok(SampleOutcome {
        undefended,
        bsc,
        sbsc: pred.signal_class,
        sbsad: pred.attack_type,
        sbsc_cnn: pred.network_class.expect("network was given"),
        signal_residuals: pred.signal_residuals,
        attack_residuals: pred.attack_residuals,
    })
}

/// Evaluates every column of `attacked` in parallel; output is in column order.
pub fn evaluate_batch(
    d_s: &BlockDictionary,
    d_a: &BlockDictionary,
    params: &MlpParams,
    attacked: &DMatrix<f64>,
    solver: &SolverConfig,
) -> Vec<Result<SampleOutcome, CliError>> {
    (0..attacked.ncols())
        .into_par_iter()
        .map(|k| evaluate_sample(d_s, d_a, params, &attacked.column(k).into_owned(), solver))
        .collect()
}
