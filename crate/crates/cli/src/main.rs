//! Command-line front end: corpus preparation, partition sampling, single
//! runs, grid sweeps, report rendering and numerical self-checks.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use aucner::corpus::{build_vocab, synthetic::SyntheticConfig, Corpus, LabelStats};
use aucner::runner::{
    aggregate, emit_report, read_aggregates, read_runs, run_experiment, run_single, sample_grid_partition, BudgetUnit,
    Cell, CorpusSource, CurveAxis, ExperimentSpec, ReportFormat,
};
use aucner::sampling::{write_manifest, ManifestRecord};
use aucner::training::LossKind;
use aucner::verify;

#[derive(Parser)]
#[command(name = "aucner", version, about = "Two-task BIO tagging with AUC-margin training")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a corpus, report label statistics and write the vocabulary.
    Prepare(PrepareArgs),
    /// Draw partitions and write their manifest.
    Sample(GridArgs),
    /// Train and evaluate a single run.
    Train(TrainArgs),
    /// Run a full experiment grid and aggregate it.
    Sweep(GridArgs),
    /// Render aggregated results as a table or a curve.
    Report(ReportArgs),
    /// Check gradients, the CRF and the metrics against independent oracles.
    Verify(VerifyArgs),
}

/// Settings shared by every command that reads an experiment spec. Flags
/// override values from the config file.
#[derive(Args, Clone)]
struct SpecArgs {
    /// TOML experiment spec.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synthetic`, or a directory holding train/dev/test CoNLL files.
    #[arg(long)]
    corpus: Option<String>,
    /// Tag column of the CoNLL files (default: last).
    #[arg(long)]
    column: Option<usize>,
    /// Base seed every partition and training seed derives from.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep only this entity type.
    #[arg(long)]
    entity_type: Option<String>,
    /// Experiment name used for output file names.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Methods, comma separated (CE, CRF, CE-2T, AUC-2T, COMAUC-2T, DICE).
    #[arg(long = "method", value_delimiter = ',')]
    methods: Vec<LossKind>,
    /// Partition sizes, comma separated.
    #[arg(long = "size", value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Target entity-token percentages, comma separated.
    #[arg(long = "entity-pct", value_delimiter = ',')]
    entity_pcts: Vec<f64>,
    /// λ values, comma separated.
    #[arg(long = "lambda", value_delimiter = ',')]
    lambdas: Vec<f64>,
    /// Partitions per grid point.
    #[arg(long)]
    partitions: Option<usize>,
    /// Unit of the partition size when sampling at a target percentage.
    #[arg(long, value_enum)]
    budget_unit: Option<Unit>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value = "AUC-2T")]
    method: LossKind,
    #[arg(long)]
    size: usize,
    #[arg(long = "entity-pct")]
    entity_pct: Option<f64>,
    #[arg(long, default_value_t = aucner::objectives::DEFAULT_LAMBDA)]
    lambda: f64,
    /// Which partition of the grid point to train on.
    #[arg(long, default_value_t = 0)]
    partition: usize,
    #[arg(long, value_enum)]
    budget_unit: Option<Unit>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Minimum training count for a word to enter the vocabulary.
    #[arg(long)]
    min_count: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Aggregates (`aggregates/*.jsonl`) or raw runs (`runs/*.jsonl`).
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Directory for the rendered files (default: next to the input).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bootstrap resamples when re-aggregating raw runs.
    #[arg(long, default_value_t = aucner::sampling::DEFAULT_BOOTSTRAP_RESAMPLES)]
    resamples: usize,
    /// Base seed for the bootstrap when re-aggregating raw runs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    Sentences,
    Tokens,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    SizeCurve,
    PctCurve,
    LambdaCurve,
}

impl From<Unit> for BudgetUnit {
    fn from(u: Unit) -> Self {
        match u {
            Unit::Sentences => BudgetUnit::Sentences,
            Unit::Tokens => BudgetUnit::Tokens,
        }
    }
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::SizeCurve => ReportFormat::Curve(CurveAxis::Size),
            Format::PctCurve => ReportFormat::Curve(CurveAxis::Pct),
            Format::LambdaCurve => ReportFormat::Curve(CurveAxis::Lambda),
        }
    }
}

/// Locate `train`, `dev` and `test` files in `dir`, accepting the usual
/// CoNLL names.
fn corpus_dir(dir: &Path, column: Option<usize>) -> Result<CorpusSource> {
    let find = |names: &[&str]| -> Result<PathBuf> {
        for name in names {
            for ext in ["", ".txt", ".conll"] {
                let p = dir.join(format!("{name}{ext}"));
                if p.is_file() {
                    return Ok(p);
                }
            }
        }
        bail!("no file named any of {names:?} in {}", dir.display())
    };
    Ok(CorpusSource::Files {
        train: find(&["train", "eng.train"])?,
        dev: find(&["dev", "valid", "eng.testa"])?,
        test: find(&["test", "eng.testb"])?,
        column,
    })
}

fn load_spec(args: &SpecArgs) -> Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentSpec::default(),
    };
    match args.corpus.as_deref() {
        Some("synthetic") => spec.corpus = CorpusSource::Synthetic(SyntheticConfig::default()),
        Some(dir) => spec.corpus = corpus_dir(Path::new(dir), args.column)?,
        None => {
            if let (Some(c), CorpusSource::Files { column, .. }) = (args.column, &mut spec.corpus) {
                *column = Some(c);
            }
        }
    }
    if let Some(seed) = args.seed {
        spec.base_seed = seed;
    }
    if let Some(jobs) = args.jobs {
        spec.jobs = jobs;
    }
    if let Some(ty) = &args.entity_type {
        spec.entity_type = Some(ty.clone());
    }
    if let Some(name) = &args.name {
        spec.name = name.clone();
    }
    spec.out_dir = args.out.clone().or(spec.out_dir).or_else(|| Some(PathBuf::from("out")));
    Ok(spec)
}

fn grid_spec(args: &GridArgs) -> Result<ExperimentSpec> {
    let mut spec = load_spec(&args.spec)?;
    if !args.methods.is_empty() {
        spec.methods = args.methods.clone();
    }
    if !args.sizes.is_empty() {
        spec.sizes = args.sizes.clone();
    }
    if !args.entity_pcts.is_empty() {
        spec.entity_pcts = args.entity_pcts.clone();
    }
    if !args.lambdas.is_empty() {
        spec.lambdas = args.lambdas.clone();
    }
    if let Some(p) = args.partitions {
        spec.partitions = p;
    }
    if let Some(u) = args.budget_unit {
        spec.budget_unit = u.into();
    }
    if let Some(e) = args.epochs {
        spec.train.epochs = e;
    }
    spec.validate()?;
    Ok(spec)
}

fn out_dir(spec: &ExperimentSpec) -> &Path {
    spec.out_dir.as_deref().expect("load_spec sets an output directory")
}

#[derive(Serialize)]
struct SplitStats {
    split: String,
    sentences: usize,
    tokens: usize,
    labels: LabelStats,
    entity_pct: f64,
}

fn split_stats(c: &Corpus) -> SplitStats {
    let labels = c.stats();
    SplitStats {
        split: c.split.clone(),
        sentences: c.len(),
        tokens: c.num_tokens(),
        labels,
        entity_pct: labels.entity_pct(),
    }
}

fn prepare(args: &PrepareArgs) -> Result<()> {
    let spec = load_spec(&args.spec)?;
    let splits = spec.load_splits()?;
    let stats: Vec<SplitStats> = [&splits.train, &splits.dev, &splits.test].into_iter().map(split_stats).collect();
    println!(
        "{:>6}  {:>9}  {:>8}  {:>7}  {:>7}  {:>7}  {:>8}",
        "split", "sentences", "tokens", "B%", "I%", "O%", "entity%"
    );
    for s in &stats {
        let (b, i, o) = s.labels.percentages();
        println!(
            "{:>6}  {:>9}  {:>8}  {b:>7.2}  {i:>7.2}  {o:>7.2}  {:>8.2}",
            s.split, s.sentences, s.tokens, s.entity_pct
        );
    }
    let vocab = build_vocab(&splits.train, args.min_count.unwrap_or(spec.min_count));
    let dir = out_dir(&spec);
    fs::create_dir_all(dir)?;
    fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&stats)?)?;
    fs::write(dir.join("vocab.json"), serde_json::to_string(&vocab)?)?;
    println!("vocabulary: {} entries ({})", vocab.len(), vocab.fingerprint());
    println!("wrote {} and {}", dir.join("stats.json").display(), dir.join("vocab.json").display());
    Ok(())
}

fn sample(args: &GridArgs) -> Result<()> {
    let spec = grid_spec(args)?;
    let splits = spec.load_splits()?;
    let pcts: Vec<Option<f64>> =
        if spec.entity_pcts.is_empty() { vec![None] } else { spec.entity_pcts.iter().map(|&p| Some(p)).collect() };
    let mut records = Vec::new();
    for &size in &spec.sizes {
        for &pct in &pcts {
            for index in 0..spec.partitions {
                let partition = sample_grid_partition(&spec, &splits.train, size, pct, index)?;
                let label = format!("{size}/{}/{index}", pct.map_or("uniform".to_string(), |p| p.to_string()));
                println!(
                    "{label:<20} {:>5} sentences {:>6} tokens {:>6.2}% entity",
                    partition.len(),
                    partition.realized_tokens,
                    partition.realized_entity_pct
                );
                records.push(ManifestRecord { label, partition });
            }
        }
    }
    let dir = out_dir(&spec).join("manifests");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.jsonl", spec.name));
    write_manifest(BufWriter::new(File::create(&path)?), &records)?;
    println!("wrote {} partitions to {}", records.len(), path.display());
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut spec = load_spec(&args.spec)?;
    if let Some(u) = args.budget_unit {
        spec.budget_unit = u.into();
    }
    if let Some(e) = args.epochs {
        spec.train.epochs = e;
    }
    let lambda = if args.method.uses_lambda() { args.lambda } else { aucner::objectives::DEFAULT_LAMBDA };
    let cell = Cell { method: args.method, size: args.size, pct: args.entity_pct, lambda };
    spec.methods = vec![cell.method];
    spec.sizes = vec![cell.size];
    spec.entity_pcts = cell.pct.into_iter().collect();
    spec.lambdas = vec![cell.lambda];
    spec.partitions = args.partition + 1;
    spec.validate()?;

    let splits = spec.load_splits()?;
    let entry = run_single(&spec, &splits, &cell, args.partition)?;
    let record = entry.record.as_ref().expect("successful run has a record");
    println!(
        "{} partition {}: {} sentences, {:.2}% entity",
        cell.key(),
        args.partition,
        record.partition.sentences,
        record.partition.entity_pct
    );
    println!("best dev epoch {} of {}", record.best_epoch, record.trajectory.len());
    println!(
        "test precision {:.4} recall {:.4} f1 {:.4} ({} inconsistent tokens)",
        record.test.precision, record.test.recall, record.test.f1, record.test_inconsistent
    );
    for w in &record.warnings {
        println!("warning: {w}");
    }

    let dir = out_dir(&spec).join("runs");
    fs::create_dir_all(&dir)?;
    let path = dir.join("train.jsonl");
    let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
    serde_json::to_writer(&mut file, &entry)?;
    file.write_all(b"\n")?;
    info!("appended run to {}", path.display());
    Ok(())
}

fn sweep(args: &GridArgs) -> Result<()> {
    let spec = grid_spec(args)?;
    info!("{} runs over {} cells", spec.total_runs(), spec.cells().len());
    let output = run_experiment(&spec)?;
    let dir = out_dir(&spec).join("aggregates");
    print!("{}", fs::read_to_string(dir.join(format!("{}.txt", spec.name)))?);
    if output.warnings > 0 {
        println!("{} of {} runs failed; see the run log", output.warnings, output.runs.len());
    }
    println!("results in {}", out_dir(&spec).display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let runs = read_runs(&args.input);
    let cells = match runs {
        Ok(runs) if !runs.is_empty() => aggregate(&runs, args.resamples, args.seed)?,
        _ => read_aggregates(&args.input).with_context(|| format!("reading {}", args.input.display()))?,
    };
    let dir = args.out.clone().unwrap_or_else(|| args.input.parent().unwrap_or(Path::new(".")).to_path_buf());
    let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
    for path in emit_report(&cells, args.format.into(), &dir, &stem)? {
        if path.extension().is_some_and(|e| e == "txt")
            || matches!(args.format, Format::SizeCurve | Format::PctCurve | Format::LambdaCurve)
        {
            print!("{}", fs::read_to_string(&path)?);
        }
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<bool> {
    let checks = verify::run_all(args.seed);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Prepare(a) => prepare(a).map(|_| true),
        Command::Sample(a) => sample(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Report(a) => report(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
