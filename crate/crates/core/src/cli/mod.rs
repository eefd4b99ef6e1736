//! The `twostage` command-line driver.
//!
//! Every command loads and validates the whole configuration before touching
//! the file system, and writes its outputs only after its work succeeded.
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime or
//! numeric error.

mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{build_report, ReportInput, ReportTables};

use crate::config::{ConfigError, ExperimentConfig, StrategyKind};
use crate::dataset::{
    apply_imbalance, class_histogram, featurize, generate_synthetic, load_corpus, split, write_corpus,
    DatasetError, FeatureMatrix, LabeledCorpus,
};
use crate::losses::LossSpec;
use crate::metrics::{aggregate, run_reports_csv, MetricsError, RunReport};
use crate::model::{load_checkpoint, save_checkpoint, ModelError, ModelSpec, ParamSet, Trainable};
use crate::trainer::{
    evaluate, pretrain, sweep, train_plan, DataFingerprint, RunManifest, SeedTrace, TrainError,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Input(_) => EXIT_DATA,
            CliError::Train(TrainError::InvalidConfig(_)) => EXIT_CONFIG,
            CliError::Train(TrainError::Dataset(_)) => EXIT_DATA,
            CliError::Model(ModelError::CorruptPayload(_) | ModelError::VersionMismatch { .. }) => EXIT_DATA,
            CliError::Metrics(MetricsError::MalformedCsv { .. }) => EXIT_DATA,
            CliError::Train(_) | CliError::Model(_) | CliError::Metrics(_) | CliError::Write { .. } => {
                EXIT_RUNTIME
            }
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "twostage", version, about = "Two-stage fine-tuning for class-imbalanced classification")]
pub struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// First run seed; with --seeds N the run seeds are SEED..SEED+N.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of run seeds.
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Override a config key, e.g. `--set data.imbalance.ratio=0.4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic train/test (and OOD test) corpora under <out>/data.
    Gen,
    /// Apply the configured imbalance to the training corpus.
    Imbalance {
        /// Corpus to transform (defaults to the configured training file).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the source model used as the pretrained starting point.
    Pretrain,
    /// Fine-tune every seed under one strategy and evaluate on the test set(s).
    Train {
        #[arg(long, value_enum)]
        strategy: StrategyKind,
    },
    /// Grid-search epochs and learning rate on a validation split.
    Sweep {
        #[arg(long, value_enum, default_value = "vanilla")]
        strategy: StrategyKind,
    },
    /// Score a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Build comparison tables and plot data from `train` output directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Score the OOD reports instead of the in-distribution ones.
        #[arg(long)]
        ood: bool,
        /// Allow inputs without a vanilla baseline (improvement columns stay empty).
        #[arg(long)]
        no_improvements: bool,
    },
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, &cli.overrides)?,
        None => ExperimentConfig::empty(&cli.overrides)?,
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if cli.seed.is_some() || cli.seeds.is_some() {
        let first = cli.seed.unwrap_or(0);
        let n = cli.seeds.unwrap_or(cfg.plan.seeds.len());
        cfg.plan.seeds = (0..n as u64).map(|i| first + i).collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Gen => cmd_gen(&cfg),
        Command::Imbalance { input } => cmd_imbalance(&cfg, input.as_deref()),
        Command::Pretrain => cmd_pretrain(&cfg),
        Command::Train { strategy } => cmd_train(&cfg, *strategy).map(|_| ()),
        Command::Sweep { strategy } => cmd_sweep(&cfg, *strategy),
        Command::Eval { checkpoint, test } => cmd_eval(&cfg, checkpoint, test),
        Command::Report {
            dirs,
            ood,
            no_improvements,
        } => cmd_report(&cfg, dirs, *ood, !*no_improvements),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    let wrap = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    fs::write(path, contents).map_err(wrap)
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{} not found ({hint})", path.display())))
    }
}

fn load(cfg: &ExperimentConfig, path: &Path) -> Result<LabeledCorpus> {
    Ok(load_corpus(path, cfg.data.max_tokens)?)
}

fn features(cfg: &ExperimentConfig, corpus: &LabeledCorpus) -> Result<FeatureMatrix<f32>> {
    Ok(featurize(corpus, cfg.data.feature_dim, cfg.data.ngram_max)?)
}

fn print_histogram(label: &str, corpus: &LabeledCorpus) {
    let hist = class_histogram(corpus);
    let cells: Vec<String> = corpus
        .class_names()
        .iter()
        .zip(&hist.counts)
        .map(|(n, c)| format!("{n}={c}"))
        .collect();
    println!("{label}: {} samples [{}]", hist.total(), cells.join(", "));
}

pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<()> {
    let synth = cfg
        .data
        .synth
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("gen needs a [data.synth] section".into()))?;
    let mut outputs = vec![
        (cfg.data_dir().join("train.tsv"), generate_synthetic(&synth.train_spec())?),
        (cfg.data_dir().join("test.tsv"), generate_synthetic(&synth.test_spec())?),
    ];
    if let Some(ood) = synth.ood_spec() {
        outputs.push((cfg.data_dir().join("test_ood.tsv"), generate_synthetic(&ood)?));
    }
    for (path, corpus) in &outputs {
        write_file(path, corpus.to_tsv())?;
        print_histogram(&path.display().to_string(), corpus);
    }
    Ok(())
}

pub fn cmd_imbalance(cfg: &ExperimentConfig, input: Option<&Path>) -> Result<()> {
    let spec = cfg
        .data
        .imbalance
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("imbalance needs a [data.imbalance] section".into()))?;
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.train_path());
    require_file(&input, "run `gen` or set data.train")?;
    let corpus = load(cfg, &input)?;
    let out = apply_imbalance(&corpus, spec)?;
    let label = cfg.imbalance_label();
    let stem = format!("train_{label}");
    let dir = cfg.data_dir();
    write_corpus_file(&out, &dir.join(format!("{stem}.tsv")))?;
    write_file(
        &dir.join(format!("{stem}_histogram.csv")),
        class_histogram(&out).to_csv(out.class_names()),
    )?;
    print_histogram(&label, &out);
    Ok(())
}

fn write_corpus_file(corpus: &LabeledCorpus, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    Ok(write_corpus(corpus, path)?)
}

/// Written next to the pretrained checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainManifest {
    pub model: ModelSpec,
    pub class_names: Vec<String>,
    pub source: DataFingerprint,
    pub epoch_losses: Vec<f64>,
    pub heldout_accuracy: f64,
    pub wall_clock_seconds: f64,
}

pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let source = match (&cfg.pretrain.source, &cfg.pretrain.synth) {
        (Some(path), _) => {
            require_file(path, "pretrain.source")?;
            load(cfg, path)?
        }
        (None, Some(spec)) => generate_synthetic(spec)?,
        (None, None) => {
            return Err(ConfigError::Invalid("pretrain needs pretrain.source or [pretrain.synth]".into()).into())
        }
    };
    let (train, heldout) = split(&source, cfg.pretrain.train_fraction, cfg.pretrain.seed)?;
    let spec = cfg.model_spec(source.num_classes());
    let stage = cfg.pretrain.stage.stage(LossSpec::CrossEntropy, Trainable::All);
    let (params, trace) = pretrain(&spec, &features(cfg, &train)?, &stage, cfg.pretrain.seed)?;
    let report = evaluate(&params, &features(cfg, &heldout)?, "pretrain", cfg.pretrain.seed)?;
    let manifest = PretrainManifest {
        model: spec,
        class_names: source.class_names().to_vec(),
        source: DataFingerprint::of("source", cfg.pretrain.source.as_ref().map(|p| p.display().to_string()), &source),
        epoch_losses: trace.epoch_losses,
        heldout_accuracy: 1.0 - report.top1_error,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let ckpt = cfg.pretrained_path();
    write_file(&ckpt, save_checkpoint(&params))?;
    let manifest_path = ckpt.with_file_name("manifest.json");
    write_file(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    println!(
        "pretrained {} parameters; held-out accuracy {:.4}; checkpoint {}",
        params.num_parameters(),
        manifest.heldout_accuracy,
        ckpt.display()
    );
    Ok(())
}

fn load_pretrained(cfg: &ExperimentConfig) -> Result<ParamSet<f32>> {
    let path = cfg.pretrained_path();
    require_file(&path, "run `pretrain` or set plan.pretrained")?;
    let bytes = fs::read(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let params = load_checkpoint(&bytes)?;
    if params.input_dim() != cfg.data.feature_dim {
        return Err(ModelError::DimensionMismatch {
            expected: cfg.data.feature_dim,
            actual: params.input_dim(),
        }
        .into());
    }
    Ok(params)
}

/// The (possibly imbalanced) training corpus.
fn training_corpus(cfg: &ExperimentConfig) -> Result<LabeledCorpus> {
    let path = cfg.train_path();
    require_file(&path, "run `gen` or set data.train")?;
    let corpus = load(cfg, &path)?;
    Ok(match &cfg.data.imbalance {
        Some(spec) => apply_imbalance(&corpus, spec)?,
        None => corpus,
    })
}

/// Where `train` writes for this config and strategy.
pub fn train_dir(cfg: &ExperimentConfig, kind: StrategyKind) -> PathBuf {
    cfg.out.join("train").join(cfg.imbalance_label()).join(kind.tag())
}

/// Train all seeds, then (and only then) read and score the test sets.
pub fn cmd_train(cfg: &ExperimentConfig, kind: StrategyKind) -> Result<RunManifest> {
    let started = Instant::now();
    let test_path = cfg.test_path();
    require_file(&test_path, "run `gen` or set data.test")?;
    let ood_path = cfg.test_ood_path();
    if let Some(p) = &ood_path {
        require_file(p, "run `gen` or set data.test_ood")?;
    }
    let pretrained = load_pretrained(cfg)?;
    let train = training_corpus(cfg)?;
    let plan = cfg.plan(kind);
    let train_fp = DataFingerprint::of("train", Some(cfg.train_path().display().to_string()), &train);
    let outcomes = train_plan(&plan, &pretrained, &features(cfg, &train)?)?;

    let names = train.class_names().to_vec();
    let mut data = vec![train_fp];
    let mut scored = Vec::new();
    for (role, path) in std::iter::once(("test", test_path)).chain(ood_path.map(|p| ("test_ood", p))) {
        let corpus = load(cfg, &path)?.align_to(&names)?;
        data.push(DataFingerprint::of(role, Some(path.display().to_string()), &corpus));
        let feats = features(cfg, &corpus)?;
        let reports = outcomes
            .iter()
            .map(|o| evaluate(&o.params, &feats, kind.tag(), o.seed))
            .collect::<Result<Vec<RunReport>, _>>()?;
        scored.push((role, reports));
    }

    let dir = train_dir(cfg, kind);
    let mut seeds = Vec::new();
    for o in &outcomes {
        let name = format!("seed-{}.ckpt", o.seed);
        write_file(&dir.join(&name), save_checkpoint(&o.params))?;
        seeds.push(SeedTrace {
            seed: o.seed,
            checkpoint: Some(name),
            epochs: o.trace.clone(),
        });
    }
    for (role, reports) in &scored {
        let suffix = if *role == "test" { "" } else { "_ood" };
        write_file(&dir.join(format!("report{suffix}.csv")), run_reports_csv(reports, &names))?;
        write_file(
            &dir.join(format!("aggregate{suffix}.csv")),
            aggregate(reports, &names)?.to_csv(),
        )?;
    }
    let hist = class_histogram(&train);
    write_file(&dir.join("histogram.csv"), hist.to_csv(&names))?;
    let manifest = RunManifest {
        strategy: kind.tag().to_string(),
        plan,
        model: outcomes[0].params.spec(),
        class_names: names.clone(),
        train_histogram: hist,
        imbalance: cfg.data.imbalance.clone(),
        data,
        seeds,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_file(&dir.join("manifest.json"), manifest.to_json())?;
    let agg = aggregate(&scored[0].1, &names)?;
    let micro = agg.get("micro_f1").expect("micro_f1 is always aggregated");
    println!(
        "{} [{}]: micro F1 {:.4} ± {:.4} over {} seeds -> {}",
        kind.tag(),
        cfg.imbalance_label(),
        micro.mean,
        micro.stderr,
        agg.num_seeds,
        dir.display()
    );
    Ok(manifest)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, kind: StrategyKind) -> Result<()> {
    let pretrained = load_pretrained(cfg)?;
    let corpus = training_corpus(cfg)?;
    let (train, val) = split(&corpus, cfg.sweep.train_fraction, cfg.sweep.split_seed)?;
    let outcome = sweep(
        &cfg.sweep.grid(),
        &cfg.plan(kind),
        &pretrained,
        &features(cfg, &train)?,
        &features(cfg, &val)?,
    )?;
    let dir = cfg.out.join("sweep").join(cfg.imbalance_label()).join(kind.tag());
    write_file(&dir.join("sweep.csv"), outcome.to_csv())?;
    let best = BestConfig {
        plan: BestPlan {
            finetune: BestHyper {
                learning_rate: outcome.best.learning_rate,
                epochs: outcome.best.epochs,
                batch_size: outcome.best.batch_size,
            },
        },
    };
    write_file(&dir.join("best.toml"), toml::to_string(&best).expect("stage serializes"))?;
    let row = outcome.best_row();
    println!(
        "best: epochs={} learning_rate={} {}={:.4} -> {}",
        row.epochs,
        row.learning_rate,
        outcome.metric.name(),
        row.mean,
        dir.display()
    );
    Ok(())
}

/// `best.toml`: a config fragment with the winning stage hyperparameters.
#[derive(Serialize)]
struct BestConfig {
    plan: BestPlan,
}

#[derive(Serialize)]
struct BestPlan {
    finetune: BestHyper,
}

#[derive(Serialize)]
struct BestHyper {
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, test: &Path) -> Result<()> {
    require_file(checkpoint, "--checkpoint")?;
    require_file(test, "--test")?;
    let bytes = fs::read(checkpoint).map_err(|e| CliError::Input(format!("{}: {e}", checkpoint.display())))?;
    let params = load_checkpoint(&bytes)?;
    let corpus = load(cfg, test)?;
    // class catalog of the run that produced the checkpoint, when available
    let names = checkpoint
        .parent()
        .map(|d| d.join("manifest.json"))
        .filter(|p| p.is_file())
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| RunManifest::from_json(&t).ok())
        .map(|m| m.class_names)
        .unwrap_or_else(|| corpus.class_names().to_vec());
    let corpus = corpus.align_to(&names)?;
    let report = evaluate(&params, &features(cfg, &corpus)?, "eval", 0)?;
    let csv = run_reports_csv(std::slice::from_ref(&report), &names);
    write_file(&cfg.out.join("eval").join("report.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_report(cfg: &ExperimentConfig, dirs: &[PathBuf], ood: bool, improvements: bool) -> Result<()> {
    let file = if ood { "report_ood.csv" } else { "report.csv" };
    let mut inputs = Vec::new();
    for dir in dirs {
        let manifest_path = dir.join("manifest.json");
        require_file(&manifest_path, "expected a `train` output directory")?;
        let manifest = RunManifest::from_json(
            &fs::read_to_string(&manifest_path).map_err(|e| CliError::Input(e.to_string()))?,
        )
        .map_err(|e| CliError::Input(format!("{}: {e}", manifest_path.display())))?;
        let report_path = dir.join(file);
        require_file(&report_path, "report file missing from run directory")?;
        let csv = fs::read_to_string(&report_path).map_err(|e| CliError::Input(e.to_string()))?;
        inputs.push(ReportInput::new(&manifest, &csv)?);
    }
    let tables = build_report(&inputs, improvements)?;
    let dir = cfg.out.join("report");
    write_file(&dir.join("table1.csv"), &tables.table1)?;
    write_file(&dir.join("table1.md"), &tables.table1_markdown)?;
    write_file(&dir.join("ratio_curve.csv"), &tables.ratio_curve)?;
    write_file(&dir.join("per_class.csv"), &tables.per_class)?;
    print!("{}", tables.table1_markdown);
    Ok(())
}
