//! Block-partitioned dictionaries with unit-norm columns.
//!
//! The signal dictionary `D_s` has one block per class, built from clean
//! training samples. The attack dictionary `D_a` has one block per
//! (class, attack type) pair, built from attacks on those samples, ordered
//! class-major then attack type.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::seq::SliceRandom;

use crate::attacks::{attack_batch, AttackSpec};
use crate::container::{Container, Entry};
use crate::data::{LabeledDataset, SubspaceAttackModel};
use crate::network::MlpParams;
use crate::{rng_from_seed, Error, Result};

/// Columns with a smaller norm cannot be normalized.
pub const ZERO_COLUMN_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockLabel {
    Class(usize),
    Attack { class: usize, attack: usize },
}

impl BlockLabel {
    pub fn class(self) -> usize {
        match self {
            BlockLabel::Class(c) | BlockLabel::Attack { class: c, .. } => c,
        }
    }

    pub fn attack(self) -> Option<usize> {
        match self {
            BlockLabel::Class(_) => None,
            BlockLabel::Attack { attack, .. } => Some(attack),
        }
    }
}

impl fmt::Display for BlockLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockLabel::Class(c) => write!(f, "s{c}"),
            BlockLabel::Attack { class, attack } => write!(f, "a{class}.{attack}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub label: BlockLabel,
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDictionary {
    atoms: DMatrix<f64>,
    blocks: Vec<Block>,
    original_norms: Vec<f64>,
    dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictConfig {
    pub per_class_count: usize,
    pub seed: u64,
    pub drop_zero_columns: bool,
    /// Draw the attack-dictionary subsample independently of the signal one.
    pub decouple_attack_indices: bool,
}

impl Default for DictConfig {
    fn default() -> Self {
        Self {
            per_class_count: 200,
            seed: 0,
            drop_zero_columns: true,
            decouple_attack_indices: false,
        }
    }
}

impl DictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class_count == 0 {
            return Err(Error::invalid("per_class_count must be at least 1"));
        }
        Ok(())
    }
}

impl BlockDictionary {
    /// Dictionary with no blocks over `R^dim`.
    pub fn empty(dim: usize) -> Self {
        Self {
            atoms: DMatrix::zeros(dim, 0),
            blocks: Vec::new(),
            original_norms: Vec::new(),
            dropped: 0,
        }
    }

    /// Normalizes the columns of each raw block and stacks them in order.
    ///
    /// Columns with norm below [`ZERO_COLUMN_NORM`] are dropped (and counted)
    /// when `drop_zero` is set, otherwise they are an error. A block left
    /// without columns is an error.
    pub fn from_blocks(dim: usize, raw: Vec<(BlockLabel, DMatrix<f64>)>, drop_zero: bool) -> Result<Self> {
        let mut columns: Vec<DVector<f64>> = Vec::new();
        let mut blocks = Vec::with_capacity(raw.len());
        let mut original_norms = Vec::new();
        let mut dropped = 0;
        let mut seen = std::collections::HashSet::new();
        for (label, m) in raw {
            if m.nrows() != dim {
                return Err(Error::invalid(format!(
                    "block {label} has {} rows, expected {dim}",
                    m.nrows()
                )));
            }
            if !seen.insert(label) {
                return Err(Error::invalid(format!("duplicate block label {label}")));
            }
            let start = columns.len();
            for (k, col) in m.column_iter().enumerate() {
                let norm = col.norm();
                if !norm.is_finite() {
                    return Err(Error::invalid(format!("block {label} column {k} is not finite")));
                }
                if norm < ZERO_COLUMN_NORM {
                    if drop_zero {
                        dropped += 1;
                        continue;
                    }
                    return Err(Error::DegenerateColumn { column: start + k, norm });
                }
                columns.push(col / norm);
                original_norms.push(norm);
            }
            let len = columns.len() - start;
            if len == 0 {
                return Err(match label {
                    BlockLabel::Attack { class, attack } => Error::EmptyBlock { class, attack },
                    BlockLabel::Class(c) => Error::invalid(format!("signal block {c} has no usable columns")),
                });
            }
            blocks.push(Block { label, start, len });
        }
        let atoms = if columns.is_empty() {
            DMatrix::zeros(dim, 0)
        } else {
            DMatrix::from_columns(&columns)
        };
        Ok(Self {
            atoms,
            blocks,
            original_norms,
            dropped,
        })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Pre-normalization ℓ2 norm of every retained column.
    pub fn original_norms(&self) -> &[f64] {
        &self.original_norms
    }

    /// Number of zero columns discarded during construction.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn column_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn find(&self, label: BlockLabel) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn block_view(&self, label: BlockLabel) -> Result<DMatrixView<'_, f64>> {
        let b = self.find(label).ok_or_else(|| Error::UnknownBlock(label.to_string()))?;
        Ok(self.view(b))
    }

    /// Columns of the block at position `b`.
    pub fn view(&self, b: usize) -> DMatrixView<'_, f64> {
        let block = &self.blocks[b];
        self.atoms.columns(block.start, block.len)
    }

    /// Dictionary made of the blocks at the given positions, in that order.
    pub fn subset(&self, positions: &[usize]) -> Self {
        let mut columns = Vec::new();
        let mut blocks = Vec::with_capacity(positions.len());
        let mut original_norms = Vec::new();
        for &b in positions {
            let block = self.blocks[b];
            let start = columns.len();
            for k in block.range() {
                columns.push(self.atoms.column(k).into_owned());
                original_norms.push(self.original_norms[k]);
            }
            blocks.push(Block { label: block.label, start, len: block.len });
        }
        let atoms = if columns.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&columns)
        };
        Self {
            atoms,
            blocks,
            original_norms,
            dropped: 0,
        }
    }

    /// Copy with `column` (normalized) appended to the block at `position`.
    pub fn with_extra_column(&self, position: usize, column: &DVector<f64>) -> Result<Self> {
        if position >= self.blocks.len() {
            return Err(Error::UnknownBlock(format!("position {position}")));
        }
        let raw = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                let mut m = self.view(b).into_owned();
                if b == position {
                    m = m.insert_column(blk.len, 0.0);
                    m.set_column(blk.len, column);
                }
                (blk.label, m)
            })
            .collect();
        Self::from_blocks(self.dim(), raw, false)
    }

    /// Positions of the blocks whose label satisfies `keep`.
    pub fn positions_where(&self, keep: impl Fn(BlockLabel) -> bool) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&b| keep(self.blocks[b].label)).collect()
    }

    /// Block table as CSV text: `block,label,class,attack,start,len`.
    pub fn block_table_csv(&self) -> String {
        let mut out = String::from("block,label,class,attack,start,len\n");
        for (b, block) in self.blocks.iter().enumerate() {
            let attack = block.label.attack().map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{b},{},{},{attack},{},{}\n",
                block.label,
                block.label.class(),
                block.start,
                block.len
            ));
        }
        out
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("dict");
        c.push("atoms", Entry::Matrix(self.atoms.clone()));
        let mut table = Vec::with_capacity(self.blocks.len() * 5);
        for block in &self.blocks {
            let (kind, class, attack) = match block.label {
                BlockLabel::Class(c) => (0, c, 0),
                BlockLabel::Attack { class, attack } => (1, class, attack),
            };
            table.extend([kind, class as u64, attack as u64, block.start as u64, block.len as u64]);
        }
        c.push("blocks", Entry::Indices(table));
        c.push(
            "norms",
            Entry::Matrix(DMatrix::from_row_slice(1, self.original_norms.len(), &self.original_norms)),
        );
        c.push("dropped", Entry::Indices(vec![self.dropped as u64]));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("dict")?;
        let atoms = c.matrix("atoms")?.clone();
        let table = c.indices("blocks")?;
        if table.len() % 5 != 0 {
            return Err(Error::invalid("block table length is not a multiple of 5"));
        }
        let mut blocks = Vec::with_capacity(table.len() / 5);
        let mut next = 0;
        for row in table.chunks(5) {
            let label = match row[0] {
                0 => BlockLabel::Class(row[1] as usize),
                1 => BlockLabel::Attack { class: row[1] as usize, attack: row[2] as usize },
                k => return Err(Error::invalid(format!("unknown block kind {k}"))),
            };
            let (start, len) = (row[3] as usize, row[4] as usize);
            if start != next || len == 0 {
                return Err(Error::invalid("block ranges must be contiguous and non-empty"));
            }
            next = start + len;
            blocks.push(Block { label, start, len });
        }
        if next != atoms.ncols() {
            return Err(Error::invalid("block table does not cover every column"));
        }
        let norms = c.matrix("norms")?;
        if norms.len() != atoms.ncols() {
            return Err(Error::invalid("one original norm per column expected"));
        }
        let dropped = c.indices("dropped")?.first().copied().unwrap_or(0) as usize;
        Ok(Self {
            atoms,
            blocks,
            original_norms: norms.iter().copied().collect(),
            dropped,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Per-class subsample of training indices, sorted ascending.
fn subsample(train: &LabeledDataset, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = rng_from_seed(seed);
    (0..train.class_count)
        .map(|class| {
            let mut idx = train.class_indices(class);
            if idx.is_empty() {
                return Err(Error::invalid(format!("class {class} has no training samples")));
            }
            idx.shuffle(&mut rng);
            idx.truncate(count);
            idx.sort_unstable();
            Ok(idx)
        })
        .collect()
}

fn attack_seed(cfg: &DictConfig) -> u64 {
    if cfg.decouple_attack_indices {
        cfg.seed ^ 0xa77a_c4ed_d1c7_0001
    } else {
        cfg.seed
    }
}

/// Signal dictionary: one block of normalized training samples per class.
pub fn build_signal_dict(train: &LabeledDataset, cfg: &DictConfig) -> Result<BlockDictionary> {
    cfg.validate()?;
    let picks = subsample(train, cfg.per_class_count, cfg.seed)?;
    let raw = picks
        .iter()
        .enumerate()
        .map(|(class, idx)| (BlockLabel::Class(class), train.select(idx).features))
        .collect();
    BlockDictionary::from_blocks(train.dim(), raw, cfg.drop_zero_columns)
}

/// Attack dictionary: for every class and attack spec, attacks on the
/// subsampled class training points at their true labels.
pub fn build_attack_dict(
    train: &LabeledDataset,
    params: &MlpParams,
    specs: &[AttackSpec],
    cfg: &DictConfig,
) -> Result<BlockDictionary> {
    cfg.validate()?;
    if specs.is_empty() {
        return Err(Error::invalid("at least one attack spec is required"));
    }
    if params.input_dim() != train.dim() {
        return Err(Error::invalid(format!(
            "network expects {} features, data has {}",
            params.input_dim(),
            train.dim()
        )));
    }
    let picks = subsample(train, cfg.per_class_count, attack_seed(cfg))?;
    let mut raw = Vec::with_capacity(picks.len() * specs.len());
    for (class, idx) in picks.iter().enumerate() {
        let points = train.select(idx);
        for (attack, spec) in specs.iter().enumerate() {
            raw.push((BlockLabel::Attack { class, attack }, attack_batch(params, &points, spec)?));
        }
    }
    BlockDictionary::from_blocks(train.dim(), raw, cfg.drop_zero_columns)
}

/// Signal and attack dictionaries sampled from a subspace model:
/// `atoms_per_block` random points of every subspace, normalized.
pub fn build_model_dicts(
    model: &SubspaceAttackModel,
    atoms_per_block: usize,
    seed: u64,
) -> Result<(BlockDictionary, BlockDictionary)> {
    if atoms_per_block == 0 {
        return Err(Error::invalid("atoms_per_block must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let n = model.dim();
    let signal = model
        .signal_bases
        .iter()
        .enumerate()
        .map(|(i, u)| (BlockLabel::Class(i), SubspaceAttackModel::points(u, atoms_per_block, &mut rng)))
        .collect();
    let mut attack = Vec::new();
    for (class, per_class) in model.attack_bases.iter().enumerate() {
        for (j, u) in per_class.iter().enumerate() {
            attack.push((
                BlockLabel::Attack { class, attack: j },
                SubspaceAttackModel::points(u, atoms_per_block, &mut rng),
            ));
        }
    }
    Ok((
        BlockDictionary::from_blocks(n, signal, true)?,
        BlockDictionary::from_blocks(n, attack, true)?,
    ))
}
