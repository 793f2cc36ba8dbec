//! Experiment orchestration: grids of (method, size, entity share, λ) cells,
//! repeated partitions per cell, parallel single-threaded runs, and
//! bootstrap aggregation.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! runs/<name>.jsonl            one RunEntry per run, sorted by cell then partition
//! runs/<name>.manifest.jsonl   the partitions that were sampled
//! aggregates/<name>.jsonl      one AggregateCell per line
//! aggregates/<name>.csv/.txt   the table report
//! checkpoints/                 only when save_checkpoints is set
//! ```

mod report;

pub use report::{emit_report, render_curve, render_table, CurveAxis, ReportFormat};

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::synthetic::{self, SyntheticConfig};
use crate::corpus::{build_vocab, parse_conll, Corpus};
use crate::error::{Error, Result};
use crate::evaluation::Metrics;
use crate::model::{Checkpoint, ModelConfig};
use crate::rng::derive_seed;
use crate::sampling::{
    bootstrap_se, sample_imbalanced, sample_partition, write_manifest, Budget, ManifestRecord, Partition,
    DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_TOLERANCE_PP,
};
use crate::training::{train, LossKind, RunRecord, TrainConfig};

pub const DEFAULT_SIZES: [usize; 12] = [20, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500, 1000];
pub const DEFAULT_ENTITY_PCTS: [f64; 5] = [1.0, 2.0, 5.0, 10.0, 20.0];
pub const DEFAULT_LAMBDA_SWEEP: [f64; 6] = [0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0];
pub const DEFAULT_PARTITIONS: usize = 10;
pub const DEFAULT_MIN_COUNT: usize = 2;

/// Where the train/dev/test splits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Files {
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
        /// Tag column; the last column when absent.
        #[serde(default)]
        column: Option<usize>,
    },
    Synthetic(SyntheticConfig),
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl CorpusSource {
    pub fn load(&self) -> Result<Splits> {
        match self {
            CorpusSource::Files { train, dev, test, column } => {
                let read = |p: &Path, split: &str| -> Result<Corpus> {
                    let text = fs::read_to_string(p)?;
                    let mut c = parse_conll(&text, *column)?;
                    c.split = split.to_string();
                    Ok(c)
                };
                Ok(Splits { train: read(train, "train")?, dev: read(dev, "dev")?, test: read(test, "test")? })
            }
            CorpusSource::Synthetic(cfg) => {
                let s = synthetic::generate(cfg);
                Ok(Splits { train: s.train, dev: s.dev, test: s.test })
            }
        }
    }
}

/// Encoder shape shared by every run; vocabulary size and seed are filled
/// in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub emb_dim: usize,
    pub window: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::default();
        ModelSettings { emb_dim: d.emb_dim, window: d.window, hidden_dim: d.hidden_dim, init_scale: d.init_scale }
    }
}

impl ModelSettings {
    pub fn config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            emb_dim: self.emb_dim,
            window: self.window,
            hidden_dim: self.hidden_dim,
            vocab_size,
            init_scale: self.init_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetUnit {
    #[default]
    Sentences,
    Tokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    pub corpus: CorpusSource,
    /// Keep only this entity type, turning every other mention into `O`.
    pub entity_type: Option<String>,
    pub methods: Vec<LossKind>,
    pub sizes: Vec<usize>,
    /// Target entity-token percentages. Empty means uniform sampling.
    pub entity_pcts: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub partitions: usize,
    pub budget_unit: BudgetUnit,
    pub tolerance_pp: f64,
    pub base_seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub min_count: usize,
    pub bootstrap_resamples: usize,
    pub save_checkpoints: bool,
    pub model: ModelSettings,
    /// Loss kind, λ and seed are overwritten per run.
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            corpus: CorpusSource::default(),
            entity_type: None,
            methods: vec![LossKind::Ce, LossKind::Ce2t, LossKind::Auc2t],
            sizes: DEFAULT_SIZES.to_vec(),
            entity_pcts: Vec::new(),
            lambdas: vec![crate::objectives::DEFAULT_LAMBDA],
            partitions: DEFAULT_PARTITIONS,
            budget_unit: BudgetUnit::Sentences,
            tolerance_pp: DEFAULT_TOLERANCE_PP,
            base_seed: 0,
            out_dir: None,
            jobs: 0,
            min_count: DEFAULT_MIN_COUNT,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            save_checkpoints: false,
            model: ModelSettings::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentSpec {
    /// The corpus splits, filtered to `entity_type` when set.
    pub fn load_splits(&self) -> Result<Splits> {
        let splits = self.corpus.load()?;
        Ok(match &self.entity_type {
            None => splits,
            Some(ty) => Splits {
                train: splits.train.filter_type(ty),
                dev: splits.dev.filter_type(ty),
                test: splits.test.filter_type(ty),
            },
        })
    }

    pub fn from_toml(text: &str) -> Result<ExperimentSpec> {
        toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ExperimentSpec> {
        ExperimentSpec::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("experiment name {:?} is not a plain file stem", self.name)));
        }
        if self.methods.is_empty() || self.sizes.is_empty() || self.lambdas.is_empty() {
            return Err(Error::Config("methods, sizes and lambdas must be nonempty".into()));
        }
        if self.partitions == 0 {
            return Err(Error::Config("partitions must be at least 1".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::Config("sizes must be at least 1".into()));
        }
        if let Some(p) = self.entity_pcts.iter().find(|p| !(**p > 0.0 && **p < 100.0)) {
            return Err(Error::Config(format!("entity percentage {p} outside (0, 100)")));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambda {l} must be finite and non-negative")));
        }
        if self.entity_pcts.is_empty() && self.budget_unit == BudgetUnit::Tokens {
            return Err(Error::Config("token budgets need an entity-percentage grid".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::Config("bootstrap needs at least one resample".into()));
        }
        self.train.validate()?;
        self.model.config(1, 0).validate()
    }

    /// Sampling coordinates `(size, pct)` in grid order.
    fn sampling_cells(&self) -> Vec<(usize, Option<f64>)> {
        let pcts: Vec<Option<f64>> =
            if self.entity_pcts.is_empty() { vec![None] } else { self.entity_pcts.iter().map(|&p| Some(p)).collect() };
        self.sizes.iter().flat_map(|&s| pcts.iter().map(move |&p| (s, p))).collect()
    }

    /// Every cell in deterministic order: method, then size, pct, λ.
    /// Methods that ignore λ get one cell per grid point, at the default λ.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        let fixed = [crate::objectives::DEFAULT_LAMBDA];
        for &method in &self.methods {
            let lambdas: &[f64] = if method.uses_lambda() { &self.lambdas } else { &fixed };
            for (size, pct) in self.sampling_cells() {
                for &lambda in lambdas {
                    cells.push(Cell { method, size, pct, lambda });
                }
            }
        }
        cells
    }

    pub fn total_runs(&self) -> usize {
        self.cells().len() * self.partitions
    }

    fn budget(&self, size: usize) -> Budget {
        match self.budget_unit {
            BudgetUnit::Sentences => Budget::Sentences(size),
            BudgetUnit::Tokens => Budget::Tokens(size),
        }
    }

    /// Depends on sampling coordinates only, so every method and λ sees the
    /// same partitions.
    pub fn partition_seed(&self, size: usize, pct: Option<f64>, index: usize) -> u64 {
        let pct = pct.map_or("uniform".to_string(), |p| format!("{p}"));
        derive_seed(self.base_seed, &format!("partition/{size}/{pct}/{index}"))
    }

    pub fn training_seed(&self, cell: &Cell, index: usize) -> u64 {
        derive_seed(self.base_seed, &format!("train/{}/{index}", cell.key()))
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: LossKind,
    pub size: usize,
    pub pct: Option<f64>,
    pub lambda: f64,
}

impl Cell {
    pub fn key(&self) -> String {
        let pct = self.pct.map_or("uniform".to_string(), |p| format!("{p}"));
        format!("{}/{}/{}/{}", self.method.name(), self.size, pct, self.lambda)
    }
}

/// Raw outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub cell: Cell,
    pub partition_index: usize,
    pub partition_seed: u64,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub partition_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub cell: Cell,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub se_precision: f64,
    pub se_recall: f64,
    pub se_f1: f64,
    /// Scores over the pooled entity counts of every successful run.
    pub micro: Metrics,
    pub n: usize,
    pub failures: Vec<RunFailure>,
}

/// Per-cell means and bootstrap standard errors. Cells appear in the order
/// of their first run; runs within a cell are taken in partition order.
pub fn aggregate(runs: &[RunEntry], resamples: usize, base_seed: u64) -> Result<Vec<AggregateCell>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Cell, Vec<&RunEntry>)> = BTreeMap::new();
    for r in runs {
        let key = r.cell.key();
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                (r.cell, Vec::new())
            })
            .1
            .push(r);
    }
    let mut cells = Vec::with_capacity(order.len());
    for key in order {
        let (cell, mut entries) = groups.remove(&key).expect("key was inserted");
        entries.sort_by_key(|r| r.partition_index);
        let ok: Vec<&RunRecord> = entries.iter().filter_map(|r| r.record.as_ref()).collect();
        let failures: Vec<RunFailure> = entries
            .iter()
            .filter(|r| r.record.is_none())
            .map(|r| RunFailure {
                partition_index: r.partition_index,
                error: r.error.clone().unwrap_or_else(|| "unknown failure".into()),
            })
            .collect();
        if ok.is_empty() {
            return Err(Error::Training(format!("every run of cell {key} failed")));
        }
        let stat = |f: fn(&RunRecord) -> f64, what: &str| -> Result<(f64, f64)> {
            let xs: Vec<f64> = ok.iter().map(|r| f(r)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let se = bootstrap_se(&xs, resamples, derive_seed(base_seed, &format!("bootstrap/{key}/{what}")))?;
            Ok((mean, se))
        };
        let (precision, se_precision) = stat(|r| r.test.precision, "p")?;
        let (recall, se_recall) = stat(|r| r.test.recall, "r")?;
        let (f1, se_f1) = stat(|r| r.test.f1, "f1")?;
        let micro = Metrics::from_counts(
            ok.iter().map(|r| r.test.true_positives).sum(),
            ok.iter().map(|r| r.test.predicted).sum(),
            ok.iter().map(|r| r.test.gold).sum(),
        );
        cells.push(AggregateCell {
            cell,
            precision,
            recall,
            f1,
            se_precision,
            se_recall,
            se_f1,
            micro,
            n: ok.len(),
            failures,
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub cells: Vec<AggregateCell>,
    pub runs: Vec<RunEntry>,
    /// Failed runs.
    pub warnings: usize,
}

/// The partition every run at grid point `(size, pct)` with partition index
/// `index` trains on.
pub fn sample_grid_partition(
    spec: &ExperimentSpec,
    train: &Corpus,
    size: usize,
    pct: Option<f64>,
    index: usize,
) -> Result<Partition> {
    sample(spec, train, size, pct, spec.partition_seed(size, pct, index))
}

fn sample(spec: &ExperimentSpec, train: &Corpus, size: usize, pct: Option<f64>, seed: u64) -> Result<Partition> {
    match pct {
        None => sample_partition(train, size, seed),
        Some(p) => sample_imbalanced(train, spec.budget(size), p, spec.tolerance_pp, seed),
    }
}

fn run_one(
    spec: &ExperimentSpec,
    splits: &Splits,
    partition: &Partition,
    cell: &Cell,
    index: usize,
) -> Result<RunRecord> {
    let seed = spec.training_seed(cell, index);
    let vocab = build_vocab(&splits.train.subset(&partition.indices), spec.min_count);
    let model = spec.model.config(vocab.len(), seed);
    let config = TrainConfig { loss_kind: cell.method, lambda: cell.lambda, seed, ..spec.train.clone() };
    let label = format!("{}#{index}", cell.key());
    let trained = train(&config, &splits.train, partition, &label, &splits.dev, &splits.test, &vocab, &model)?;
    let mut record = trained.record;
    if spec.save_checkpoints {
        if let Some(dir) = &spec.out_dir {
            let dir = dir.join("checkpoints");
            fs::create_dir_all(&dir)?;
            let file = dir.join(format!("{}.json", label.replace(['/', '#'], "_")));
            let crf = (cell.method == LossKind::Crf).then_some(trained.crf);
            Checkpoint::new(trained.params, crf, vocab.fingerprint()).save(&file)?;
            record.checkpoint = Some(file.display().to_string());
        }
    }
    Ok(record)
}

/// One run of `cell` on partition `index`, identical to the matching run of
/// a full experiment over the same spec.
pub fn run_single(spec: &ExperimentSpec, splits: &Splits, cell: &Cell, index: usize) -> Result<RunEntry> {
    let partition = sample_grid_partition(spec, &splits.train, cell.size, cell.pct, index)?;
    let record = run_one(spec, splits, &partition, cell, index)?;
    Ok(RunEntry {
        cell: *cell,
        partition_index: index,
        partition_seed: spec.partition_seed(cell.size, cell.pct, index),
        record: Some(record),
        error: None,
    })
}

/// Sample, train and evaluate every (cell, partition) pair, then aggregate.
/// Runs execute on a pool of `spec.jobs` threads; results are sorted before
/// aggregation so the output does not depend on scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let splits = spec.load_splits()?;
    run_experiment_on(spec, &splits)
}

/// [`run_experiment`] on already loaded splits.
pub fn run_experiment_on(spec: &ExperimentSpec, splits: &Splits) -> Result<ExperimentOutput> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    // Partitions are shared across methods and λ values, so sample each once.
    let sampling: Vec<(usize, Option<f64>, usize)> =
        spec.sampling_cells().into_iter().flat_map(|(s, p)| (0..spec.partitions).map(move |i| (s, p, i))).collect();
    let partitions: Vec<(u64, std::result::Result<Partition, String>)> = pool.install(|| {
        sampling
            .par_iter()
            .map(|&(size, pct, i)| {
                let seed = spec.partition_seed(size, pct, i);
                (seed, sample(spec, &splits.train, size, pct, seed).map_err(|e| e.to_string()))
            })
            .collect()
    });
    let lookup = |size: usize, pct: Option<f64>, i: usize| -> usize {
        sampling.iter().position(|&(s, p, j)| s == size && p == pct && j == i).expect("sampled")
    };

    let jobs: Vec<(Cell, usize)> =
        spec.cells().into_iter().flat_map(|c| (0..spec.partitions).map(move |i| (c, i))).collect();
    info!("{}: {} runs over {} cells", spec.name, jobs.len(), jobs.len() / spec.partitions);

    let mut runs: Vec<RunEntry> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, index)| {
                let (partition_seed, partition) = &partitions[lookup(cell.size, cell.pct, index)];
                let outcome = match partition {
                    Ok(p) => run_one(spec, splits, p, &cell, index).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                let (record, error) = match outcome {
                    Ok(r) => (Some(r), None),
                    Err(e) => {
                        warn!("{} partition {index}: {e}", cell.key());
                        (None, Some(e))
                    }
                };
                RunEntry { cell, partition_index: index, partition_seed: *partition_seed, record, error }
            })
            .collect()
    });
    // par_iter().collect() keeps input order already; sorting makes the
    // contract explicit.
    let rank: BTreeMap<String, usize> = spec.cells().iter().enumerate().map(|(i, c)| (c.key(), i)).collect();
    runs.sort_by_key(|r| (rank[&r.cell.key()], r.partition_index));
    let warnings = runs.iter().filter(|r| r.record.is_none()).count();

    if let Some(dir) = &spec.out_dir {
        write_runs(&dir.join("runs").join(format!("{}.jsonl", spec.name)), &runs)?;
        let manifest: Vec<ManifestRecord> = sampling
            .iter()
            .zip(&partitions)
            .filter_map(|(&(size, pct, i), (_, p))| {
                let label = format!("{size}/{}/{i}", pct.map_or("uniform".to_string(), |p| format!("{p}")));
                p.as_ref().ok().map(|p| ManifestRecord { label, partition: p.clone() })
            })
            .collect();
        let path = dir.join("runs").join(format!("{}.manifest.jsonl", spec.name));
        write_manifest(BufWriter::new(File::create(path)?), &manifest)?;
    }

    let cells = aggregate(&runs, spec.bootstrap_resamples, spec.base_seed)?;
    if let Some(dir) = &spec.out_dir {
        let agg = dir.join("aggregates");
        write_aggregates(&agg.join(format!("{}.jsonl", spec.name)), &cells)?;
        emit_report(&cells, ReportFormat::Table, &agg, &spec.name)?;
    }
    if warnings > 0 {
        warn!("{warnings} of {} runs failed", runs.len());
    }
    Ok(ExperimentOutput { cells, runs, warnings })
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    use std::io::BufRead;
    let mut items = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            items.push(serde_json::from_str(&line)?);
        }
    }
    Ok(items)
}

pub fn write_runs(path: &Path, runs: &[RunEntry]) -> Result<()> {
    write_lines(path, runs)
}

pub fn read_runs(path: &Path) -> Result<Vec<RunEntry>> {
    read_lines(path)
}

pub fn write_aggregates(path: &Path, cells: &[AggregateCell]) -> Result<()> {
    write_lines(path, cells)
}

pub fn read_aggregates(path: &Path) -> Result<Vec<AggregateCell>> {
    read_lines(path)
}
