//! The four subcommands. Every CSV starts with a `#` comment line holding the
//! config digest and seed, followed by a header row.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use sbsr::container::Container;
use sbsr::geometry::{prc_check, min_norm_check, GeometryReport};
use sbsr::network::{accuracy, train_sgd, MlpParams};

use crate::config::{hex, ExperimentConfig};
use crate::error::CliError;
use crate::experiment::{build_dictionaries, evaluate_batch, load_data, test_attacks, test_subset, Prepared, SampleOutcome};

pub const CHECKPOINT_FILE: &str = "model.sbsr";

/// A config with command-line overrides applied, plus where to write.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
}

impl Run {
    pub fn new(mut cfg: ExperimentConfig, out: Option<PathBuf>, seed: Option<u64>, checkpoint: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.out_dir = o;
        }
        let out_dir = cfg.out_dir.clone();
        let checkpoint = checkpoint.unwrap_or_else(|| out_dir.join(CHECKPOINT_FILE));
        Self { cfg, out_dir, checkpoint }
    }

    fn metadata(&self) -> String {
        format!(
            "# config_sha256={} seed={} test_per_attack={}\n",
            self.cfg.digest(),
            self.cfg.seed,
            self.cfg.evaluation.test_per_attack
        )
    }

    fn write_csv(&self, name: &str, header: &str, rows: &[String]) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out_dir)?;
        let mut text = self.metadata();
        text.push_str(header);
        text.push('\n');
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        let path = self.out_dir.join(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    fn load_checkpoint(&self, data: &Prepared) -> Result<MlpParams, CliError> {
        if !self.checkpoint.exists() {
            return Err(CliError::Usage(format!(
                "checkpoint not found: {} (run `train` first or pass --checkpoint)",
                self.checkpoint.display()
            )));
        }
        let params = MlpParams::from_container(&Container::read(&self.checkpoint)?)?;
        if params.input_dim() != data.train.dim() {
            return Err(CliError::Data(format!(
                "checkpoint expects inputs of dimension {}, dataset has {}",
                params.input_dim(),
                data.train.dim()
            )));
        }
        Ok(params)
    }
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

pub fn train(run: &Run) -> Result<(), CliError> {
    let data = load_data(&run.cfg)?;
    if data.train.is_empty() {
        return Err(CliError::Data("training split is empty".into()));
    }
    let trained = train_sgd(&data.train, &run.cfg.network.hidden, &run.cfg.train_config())?;
    if let Some(dir) = run.checkpoint.parent() {
        fs::create_dir_all(dir)?;
    }
    trained.params.to_container().write(&run.checkpoint)?;
    let rows: Vec<String> =
        trained.history.iter().map(|e| format!("{},{:.12e},{:.6}", e.epoch, e.loss, e.accuracy)).collect();
    run.write_csv("train_history.csv", "epoch,loss,train_accuracy", &rows)?;
    let clean = if data.test.is_empty() { f64::NAN } else { accuracy(&trained.params, &data.test)? };
    println!("clean test accuracy: {}", fmt_acc(clean));
    println!("checkpoint: {} sha256={}", run.checkpoint.display(), file_digest(&run.checkpoint)?);
    Ok(())
}

pub const SAMPLES_HEADER: &str = "sample,attack,norm,epsilon,true_class,undefended,bsc,sbsc,sbsad,sbsc_cnn,\
undefended_ok,bsc_ok,sbsc_ok,sbsad_ok,sbsc_cnn_ok,signal_residuals,attack_residuals,status";

pub const SUMMARY_HEADER: &str = "attack,norm,epsilon,samples,failures,undefended,bsc,sbsc,sbsc_cnn,sbsad";

pub const SWEEP_HEADER: &str = "eps_scale,epsilons,samples,failures,undefended,bsc,sbsc,sbsc_cnn,sbsad";

/// Correct-prediction counts for one batch of attacked samples.
#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    ok: usize,
    failures: usize,
    undefended: usize,
    bsc: usize,
    sbsc: usize,
    sbsc_cnn: usize,
    sbsad: usize,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.ok += other.ok;
        self.failures += other.failures;
        self.undefended += other.undefended;
        self.bsc += other.bsc;
        self.sbsc += other.sbsc;
        self.sbsc_cnn += other.sbsc_cnn;
        self.sbsad += other.sbsad;
    }

    fn rate(&self, count: usize) -> f64 {
        count as f64 / self.ok as f64
    }

    /// `undefended,bsc,sbsc,sbsc_cnn,sbsad`, with SBSAD reported as N/A when
    /// there was no attack.
    fn columns(&self, attacked: bool) -> String {
        let sbsad = if attacked { fmt_acc(self.rate(self.sbsad)) } else { "N/A".to_string() };
        format!(
            "{},{},{},{},{}",
            fmt_acc(self.rate(self.undefended)),
            fmt_acc(self.rate(self.bsc)),
            fmt_acc(self.rate(self.sbsc)),
            fmt_acc(self.rate(self.sbsc_cnn)),
            sbsad
        )
    }
}

fn fmt_acc(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "N/A".to_string()
    }
}

/// Shortest decimal form after rounding to 12 significant digits.
fn fmt_num(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    rounded.to_string()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(";")
}

fn clean_message(e: &CliError) -> String {
    e.to_string().replace([',', '\n', '\r'], " ")
}

/// Dictionaries plus the class-balanced test subset shared by `evaluate`,
/// `geometry` and `sweep`.
struct Setup {
    data: Prepared,
    params: MlpParams,
    d_s: sbsr::dictionary::BlockDictionary,
    d_a: sbsr::dictionary::BlockDictionary,
    subset: sbsr::data::LabeledDataset,
}

fn setup(run: &Run, subset_size: usize) -> Result<Setup, CliError> {
    let data = load_data(&run.cfg)?;
    let params = run.load_checkpoint(&data)?;
    let (d_s, d_a) = build_dictionaries(&run.cfg, &data, &params)?;
    let subset = data.test.select(&test_subset(&data.test, subset_size));
    Ok(Setup { data, params, d_s, d_a, subset })
}

/// Attacks the subset with attack `j` at `scale` and evaluates every sample.
fn attack_and_evaluate(
    run: &Run,
    s: &Setup,
    j: usize,
    scale: f64,
) -> Result<Vec<Result<SampleOutcome, CliError>>, CliError> {
    let deltas = test_attacks(&run.cfg, &s.data, &s.params, &s.subset, j, scale)?;
    let attacked: DMatrix<f64> = &s.subset.features + deltas;
    Ok(evaluate_batch(&s.d_s, &s.d_a, &s.params, &attacked, &run.cfg.solver_config()))
}

fn tally(outcomes: &[Result<SampleOutcome, CliError>], labels: &[usize], j: usize) -> Tally {
    let mut t = Tally::default();
    for (o, &y) in outcomes.iter().zip(labels) {
        match o {
            Ok(o) => {
                t.ok += 1;
                t.undefended += (o.undefended == y) as usize;
                t.bsc += (o.bsc == y) as usize;
                t.sbsc += (o.sbsc == y) as usize;
                t.sbsc_cnn += (o.sbsc_cnn == y) as usize;
                t.sbsad += (o.sbsad == Some(j)) as usize;
            }
            Err(_) => t.failures += 1,
        }
    }
    t
}

pub fn evaluate(run: &Run) -> Result<(), CliError> {
    let s = setup(run, run.cfg.evaluation.test_per_attack)?;
    let mut sample_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for (j, a) in run.cfg.attacks.iter().enumerate() {
        let outcomes = attack_and_evaluate(run, &s, j, 1.0)?;
        for (k, o) in outcomes.iter().enumerate() {
            let y = s.subset.labels[k];
            let prefix = format!("{k},{j},{},{},{y}", a.norm, a.epsilon);
            sample_rows.push(match o {
                Ok(o) => {
                    let sbsad = o.sbsad.map(|v| v.to_string()).unwrap_or_default();
                    format!(
                        "{prefix},{},{},{},{sbsad},{},{},{},{},{},{},{},{},ok",
                        o.undefended,
                        o.bsc,
                        o.sbsc,
                        o.sbsc_cnn,
                        (o.undefended == y) as u8,
                        (o.bsc == y) as u8,
                        (o.sbsc == y) as u8,
                        (o.sbsad == Some(j)) as u8,
                        (o.sbsc_cnn == y) as u8,
                        join(&o.signal_residuals),
                        join(&o.attack_residuals),
                    )
                }
                Err(e) => {
                    eprintln!("sample {k} attack {j}: {e}");
                    format!("{prefix},,,,,,,,,,,,,error: {}", clean_message(e))
                }
            });
        }
        let t = tally(&outcomes, &s.subset.labels, j);
        summary_rows.push(format!("{j},{},{},{},{},{}", a.norm, a.epsilon, t.ok, t.failures, t.columns(true)));
        println!(
            "attack {j} ({} eps={}): {} samples, {} failures, [undefended,bsc,sbsc,sbsc_cnn,sbsad] = {}",
            a.norm,
            a.epsilon,
            t.ok,
            t.failures,
            t.columns(true)
        );
    }
    run.write_csv("evaluate_samples.csv", SAMPLES_HEADER, &sample_rows)?;
    run.write_csv("evaluate_summary.csv", SUMMARY_HEADER, &summary_rows)?;
    Ok(())
}

pub const MIN_NORM_HEADER: &str = "sample,attack,true_class,lhs,rhs,holds,wrong_class_infeasible,status";

pub fn geometry(run: &Run) -> Result<(), CliError> {
    let ev = &run.cfg.evaluation;
    let s = setup(run, ev.min_norm_samples)?;
    let classes = s.data.train.class_count;
    let attacks = run.cfg.attacks.len();
    let pairs: Vec<(usize, usize)> = (0..classes).flat_map(|i| (0..attacks).map(move |j| (i, j))).collect();
    let seed = run.cfg.seed;
    let reports: Vec<GeometryReport> = pairs
        .par_iter()
        .map(|&(i, j)| prc_check(&s.d_s, &s.d_a, i, j, ev.geometry_samples, seed).map_err(CliError::from))
        .collect::<Result<_, _>>()?;

    let pair_dir = run.out_dir.join("geometry_pairs");
    fs::create_dir_all(&pair_dir)?;
    for r in &reports {
        let mut text = run.metadata();
        text.push_str(&r.to_key_value());
        fs::write(pair_dir.join(format!("pair_{}_{}.txt", r.i_star, r.j_star)), text)?;
    }
    let rows: Vec<String> = reports.iter().map(GeometryReport::csv_row).collect();
    run.write_csv("geometry.csv", GeometryReport::CSV_HEADER, &rows)?;

    let solver = run.cfg.solver_config();
    let mut prop_rows = Vec::new();
    for j in 0..attacks {
        let deltas = test_attacks(&run.cfg, &s.data, &s.params, &s.subset, j, 1.0)?;
        let attacked: DMatrix<f64> = &s.subset.features + deltas;
        let outcomes: Vec<_> = (0..attacked.ncols())
            .into_par_iter()
            .map(|k| min_norm_check(&s.d_s, &s.d_a, &attacked.column(k).into_owned(), s.subset.labels[k], j, &solver))
            .collect();
        for (k, o) in outcomes.into_iter().enumerate() {
            let y = s.subset.labels[k];
            prop_rows.push(match o {
                Ok(o) => format!(
                    "{k},{j},{y},{:.12e},{:.12e},{},{},ok",
                    o.lhs,
                    o.rhs,
                    o.holds as u8,
                    o.wrong_class_infeasible as u8
                ),
                Err(e) => {
                    let e = CliError::from(e);
                    eprintln!("min_norm sample {k} attack {j}: {e}");
                    format!("{k},{j},{y},,,,,error: {}", clean_message(&e))
                }
            });
        }
    }
    run.write_csv("min_norm.csv", MIN_NORM_HEADER, &prop_rows)?;
    let positive = reports.iter().filter(|r| r.prc_margin > 0.0).count();
    println!("geometry: {positive}/{} pairs with positive PRC margin", reports.len());
    Ok(())
}

pub fn sweep(run: &Run) -> Result<(), CliError> {
    let s = setup(run, run.cfg.evaluation.test_per_attack)?;
    let mut rows = Vec::new();
    for &scale in &run.cfg.sweep.eps_scales {
        let mut total = Tally::default();
        for j in 0..run.cfg.attacks.len() {
            let outcomes = attack_and_evaluate(run, &s, j, scale)?;
            for (k, o) in outcomes.iter().enumerate() {
                if let Err(e) = o {
                    eprintln!("sweep scale {scale} sample {k} attack {j}: {e}");
                }
            }
            total.add(tally(&outcomes, &s.subset.labels, j));
        }
        let eps_text: Vec<String> = run.cfg.attacks.iter().map(|a| fmt_num(a.epsilon * scale)).collect();
        let eps_text = eps_text.join(";");
        let row = format!("{scale},{eps_text},{},{},{}", total.ok, total.failures, total.columns(scale > 0.0));
        println!("sweep {row}");
        rows.push(row);
    }
    run.write_csv("sweep.csv", SWEEP_HEADER, &rows)?;
    Ok(())
}
