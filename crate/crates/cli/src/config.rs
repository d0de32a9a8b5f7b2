//! Experiment configuration: one TOML file, every key documented in
//! `configs/README.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sbsr::attacks::{AttackSpec, Norm};
use sbsr::dictionary::DictConfig;
use sbsr::network::TrainConfig;
use sbsr::solver::SolverConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    pub attacks: Vec<AttackConfig>,
    #[serde(default)]
    pub dictionary: DictionaryConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Noisy points on random low-dimensional class subspaces.
    Subspaces {
        ambient_dim: usize,
        class_count: usize,
        subspace_dim: usize,
        samples_per_class: usize,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default)]
        orthogonal: bool,
    },
    /// Synthetic stroke images in `[0, 1]`.
    Digits {
        side: usize,
        class_count: usize,
        samples_per_class: usize,
        #[serde(default = "default_stroke_pool")]
        stroke_pool: usize,
        #[serde(default = "default_strokes_per_class")]
        strokes_per_class: usize,
        #[serde(default = "default_digit_noise")]
        noise_sigma: f64,
    },
    /// IDX image/label files (e.g. MNIST). Relative paths resolve against
    /// the config file's directory.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        #[serde(default = "default_idx_classes")]
        class_count: usize,
    },
    /// Mutually orthogonal signal and attack subspaces; test attacks are
    /// drawn from the attack subspaces instead of being computed by PGD.
    AttackModel {
        ambient_dim: usize,
        class_count: usize,
        subspace_dim: usize,
        samples_per_class: usize,
    },
}

fn default_stroke_pool() -> usize {
    16
}
fn default_strokes_per_class() -> usize {
    4
}
fn default_digit_noise() -> f64 {
    0.02
}
fn default_idx_classes() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Fraction of each class used for training (ignored for IDX with test files).
    pub train_fraction: f64,
    /// Keep at most this many training samples per class.
    pub train_per_class: Option<usize>,
    /// Keep at most this many test samples per class.
    pub test_per_class: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, train_per_class: None, test_per_class: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: vec![64],
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// `l1`, `l2` or `linf`.
    pub norm: String,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    /// Box `[lo, hi]` for attacked inputs.
    #[serde(default)]
    pub bounds: Option<[f64; 2]>,
    #[serde(default)]
    pub random_start: bool,
    /// Coordinates moved per ℓ1 step.
    #[serde(default = "one")]
    pub l1_coordinates: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionaryConfig {
    pub per_class_count: usize,
    pub drop_zero_columns: bool,
    pub decouple_attack_indices: bool,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        let d = DictConfig::default();
        Self {
            per_class_count: d.per_class_count,
            drop_zero_columns: d.drop_zero_columns,
            decouple_attack_indices: d.decouple_attack_indices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub gamma: f64,
    pub max_outer_iters: usize,
    pub inner_max_iters: usize,
    pub inner_tolerance: f64,
    pub continuation_floor: f64,
    pub feasibility_tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            gamma: s.gamma,
            max_outer_iters: s.max_outer_iters,
            inner_max_iters: s.inner_max_iters,
            inner_tolerance: s.inner_tolerance,
            continuation_floor: s.continuation_floor,
            feasibility_tolerance: s.feasibility_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Test samples attacked per attack type.
    pub test_per_attack: usize,
    /// Monte-Carlo samples per sphere search in `geometry`.
    pub geometry_samples: usize,
    /// Test samples per attack type checked with the min-norm comparison.
    pub min_norm_samples: usize,
    /// Copy the first atom of class 0 into the class-1 signal block.
    pub corrupt_duplicate: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { test_per_attack: 200, geometry_samples: 2_000, min_norm_samples: 5, corrupt_duplicate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Multipliers of every attack's base ε (and step size); strictly increasing.
    pub eps_scales: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { eps_scales: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0] }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        if let DatasetConfig::Idx { train_images, train_labels, test_images, test_labels, .. } = &mut self.dataset {
            for p in [Some(train_images), Some(train_labels), test_images.as_mut(), test_labels.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.attacks.is_empty() {
            return usage("at least one [[attacks]] entry is required");
        }
        for a in &self.attacks {
            a.to_spec(0)?.validate().map_err(|e| CliError::Usage(format!("attack: {e}")))?;
        }
        if !self.sweep.eps_scales.windows(2).all(|w| w[0] < w[1]) {
            return usage("sweep.eps_scales must be strictly increasing");
        }
        if self.sweep.eps_scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return usage("sweep.eps_scales must be finite and non-negative");
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return usage("split.train_fraction must lie in (0, 1)");
        }
        if let DatasetConfig::AttackModel { .. } = self.dataset {
            if self.attacks.iter().any(|a| !matches!(a.norm(), Ok(Norm::L2))) {
                return usage("attack_model datasets draw ℓ2-scaled subspace attacks; use norm = \"l2\"");
            }
        }
        self.train_config().validate().map_err(|e| CliError::Usage(format!("network: {e}")))?;
        self.dict_config().validate().map_err(|e| CliError::Usage(format!("dictionary: {e}")))?;
        self.solver_config().validate().map_err(|e| CliError::Usage(format!("solver: {e}")))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.network.learning_rate,
            momentum: self.network.momentum,
            epochs: self.network.epochs,
            batch_size: self.network.batch_size,
            seed: self.seed,
        }
    }

    pub fn dict_config(&self) -> DictConfig {
        DictConfig {
            per_class_count: self.dictionary.per_class_count,
            seed: self.seed,
            drop_zero_columns: self.dictionary.drop_zero_columns,
            decouple_attack_indices: self.dictionary.decouple_attack_indices,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            gamma: s.gamma,
            max_outer_iters: s.max_outer_iters,
            inner_max_iters: s.inner_max_iters,
            inner_tolerance: s.inner_tolerance,
            continuation_floor: s.continuation_floor,
            feasibility_tolerance: s.feasibility_tolerance,
        }
    }

    /// Attack specs with per-type seeds derived from the global seed.
    pub fn attack_specs(&self) -> Result<Vec<AttackSpec>, CliError> {
        self.attacks
            .iter()
            .enumerate()
            .map(|(j, a)| a.to_spec(self.seed.wrapping_add(j as u64)))
            .collect()
    }

    /// SHA-256 of the canonical serialization (after command-line overrides),
    /// leaving out the output directory so reports can be compared across
    /// locations.
    pub fn digest(&self) -> String {
        let canonical = Self { out_dir: PathBuf::new(), ..self.clone() };
        let text = toml::to_string(&canonical).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

impl AttackConfig {
    pub fn norm(&self) -> Result<Norm, CliError> {
        self.norm.parse().map_err(|e| CliError::Usage(format!("attack: {e}")))
    }

    pub fn to_spec(&self, seed: u64) -> Result<AttackSpec, CliError> {
        let mut spec = AttackSpec::new(self.norm()?, self.epsilon, self.step_size, self.iterations);
        if let Some([lo, hi]) = self.bounds {
            spec = spec.with_bounds(lo, hi);
        }
        spec.random_start = self.random_start;
        spec.l1_coordinates = self.l1_coordinates;
        spec.seed = seed;
        Ok(spec)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
