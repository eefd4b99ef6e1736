//! Experiment configuration, read from a TOML file.
//!
//! Relative paths in the file are resolved against the file's directory.
//! Unset data paths default to the files `gen` writes under the output
//! directory, and the pretrained checkpoint defaults to the one `pretrain`
//! writes there.
//!
//! ```toml
//! out = "../runs/synthetic"
//!
//! [data]
//! feature_dim = 2048
//! ngram_max = 1
//!
//! [data.synth]
//! num_classes = 2
//! vocab_size = 2000
//! doc_length = 4
//! samples_per_class = 5000
//! separation = 0.8
//! seed = 1
//! ood_shift = 0.3
//!
//! [data.imbalance]
//! kind = "ratio"
//! minority_class = 1
//! ratio = 0.1
//!
//! [model]
//! backbone_dims = [64, 32]
//! final_dim = 32
//!
//! [plan.finetune]
//! learning_rate = 1e-3
//! epochs = 2
//!
//! [plan.stage1]
//! loss = "ldam"
//! learning_rate = 1e-3
//! epochs = 3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ImbalanceSpec, ImbalanceVariant, SynthSpec};
use crate::losses::LossSpec;
use crate::model::{ModelSpec, Trainable};
use crate::trainer::{
    AdamConfig, PlanOptions, SelectionMetric, StageConfig, Strategy, SweepGrid, TrainPlan, DEFAULT_SEEDS,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected KEY=VALUE with a dotted key")]
    BadOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Vanilla,
    Ldam,
    TwoStage,
}

impl StrategyKind {
    pub fn tag(self) -> &'static str {
        match self {
            StrategyKind::Vanilla => "vanilla",
            StrategyKind::Ldam => "ldam",
            StrategyKind::TwoStage => "two-stage",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub test_ood: Option<PathBuf>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "one")]
    pub ngram_max: usize,
    pub synth: Option<SynthConfig>,
    pub imbalance: Option<ImbalanceSpec>,
}

fn default_max_tokens() -> usize {
    256
}
fn default_feature_dim() -> usize {
    4096
}
fn one() -> usize {
    1
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            test_ood: None,
            max_tokens: default_max_tokens(),
            feature_dim: default_feature_dim(),
            ngram_max: 1,
            synth: None,
            imbalance: None,
        }
    }
}

/// Synthetic corpus settings for `gen`. `samples_per_class` and `seed` size
/// and seed the training file; the test files have their own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(flatten)]
    pub spec: SynthSpec,
    #[serde(default = "default_test_samples")]
    pub test_samples_per_class: usize,
    pub test_seed: Option<u64>,
    /// When set, `gen` also writes a shifted out-of-distribution test file.
    pub ood_shift: Option<f64>,
}

fn default_test_samples() -> usize {
    1000
}

impl SynthConfig {
    pub fn train_spec(&self) -> SynthSpec {
        self.spec.clone()
    }

    pub fn test_spec(&self) -> SynthSpec {
        SynthSpec {
            samples_per_class: self.test_samples_per_class,
            seed: self.test_seed.unwrap_or(self.spec.seed.wrapping_add(1)),
            ..self.spec.clone()
        }
    }

    pub fn ood_spec(&self) -> Option<SynthSpec> {
        self.ood_shift.map(|shift| SynthSpec {
            shift,
            seed: self.test_spec().seed.wrapping_add(1),
            ..self.test_spec()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone_dims: Vec<usize>,
    pub final_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        Self {
            backbone_dims: spec.backbone_dims,
            final_dim: spec.final_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Source corpus file; alternatively `[pretrain.synth]`.
    pub source: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    #[serde(flatten)]
    pub stage: StageHyper,
    #[serde(default)]
    pub seed: u64,
    /// Share of the source corpus used for training; the rest measures
    /// held-out accuracy.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.9
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            source: None,
            synth: None,
            stage: StageHyper::default(),
            seed: 0,
            train_fraction: default_train_fraction(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageHyper {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    3
}
fn default_batch() -> usize {
    16
}

impl Default for StageHyper {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            shuffle_seed: 0,
        }
    }
}

impl StageHyper {
    pub fn stage(&self, loss: LossSpec, trainable: Trainable) -> StageConfig {
        StageConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            loss,
            trainable,
            shuffle_seed: self.shuffle_seed,
        }
    }
}

/// A stage whose loss defaults to LDAM when `loss` is omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct ReweightedStage {
    #[serde(flatten)]
    pub hyper: StageHyper,
    #[serde(flatten)]
    pub loss: LossSpec,
}

impl Default for ReweightedStage {
    fn default() -> Self {
        Self {
            hyper: StageHyper::default(),
            loss: LossSpec::ldam_default(),
        }
    }
}

impl TryFrom<toml::Table> for ReweightedStage {
    type Error = String;

    fn try_from(mut t: toml::Table) -> std::result::Result<Self, String> {
        t.entry("loss").or_insert_with(|| "ldam".into());
        #[derive(Deserialize)]
        struct Raw {
            #[serde(flatten)]
            hyper: StageHyper,
            #[serde(flatten)]
            loss: LossSpec,
        }
        let raw: Raw = toml::Value::Table(t).try_into().map_err(|e: toml::de::Error| e.to_string())?;
        Ok(Self {
            hyper: raw.hyper,
            loss: raw.loss,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdamConfig {
    #[serde(default = "default_max_margin")]
    pub max_margin: f64,
    #[serde(default = "default_scale")]
    pub s: f64,
    pub reweight_beta: Option<f64>,
}

fn default_max_margin() -> f64 {
    0.5
}
fn default_scale() -> f64 {
    30.0
}

impl Default for LdamConfig {
    fn default() -> Self {
        Self {
            max_margin: default_max_margin(),
            s: default_scale(),
            reweight_beta: None,
        }
    }
}

impl LdamConfig {
    pub fn loss(&self) -> LossSpec {
        LossSpec::Ldam {
            max_margin: self.max_margin,
            scale: self.s,
            reweight_beta: self.reweight_beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "yes")]
    pub reset_optimizer: bool,
    #[serde(default = "yes")]
    pub reinit_head: bool,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Pretrained checkpoint; defaults to `<out>/pretrain/model.ckpt`.
    pub pretrained: Option<PathBuf>,
    /// Hyperparameters of the vanilla and LDAM baselines and of stage 2.
    #[serde(default)]
    pub finetune: StageHyper,
    /// Stage 1 of the two-stage strategy (final layer and head only).
    #[serde(default)]
    pub stage1: ReweightedStage,
    /// Loss of the LDAM baseline.
    #[serde(default)]
    pub ldam: LdamConfig,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn yes() -> bool {
    true
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            reset_optimizer: true,
            reinit_head: true,
            adam: AdamConfig::default(),
            pretrained: None,
            finetune: StageHyper::default(),
            stage1: ReweightedStage::default(),
            ldam: LdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_epochs")]
    pub epochs_set: Vec<usize>,
    #[serde(default = "default_sweep_lrs")]
    pub lr_set: Vec<f64>,
    #[serde(default)]
    pub selection_metric: SelectionMetric,
    /// Share of the training set kept for training during a sweep; the rest
    /// is the validation set.
    #[serde(default = "default_sweep_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_sweep_epochs() -> Vec<usize> {
    SweepGrid::default().epochs_set
}
fn default_sweep_lrs() -> Vec<f64> {
    SweepGrid::default().lr_set
}
fn default_sweep_fraction() -> f64 {
    0.8
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epochs_set: default_sweep_epochs(),
            lr_set: default_sweep_lrs(),
            selection_metric: SelectionMetric::MicroF1,
            train_fraction: default_sweep_fraction(),
            split_seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            epochs_set: self.epochs_set.clone(),
            lr_set: self.lr_set.clone(),
            selection_metric: self.selection_metric,
        }
    }
}

/// Apply `a.b.c=value` overrides to a parsed TOML document. Values are read
/// as TOML when possible (`0.4`, `[1, 2]`, `true`) and as strings otherwise.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(item.clone()))?;
        let keys: Vec<&str> = key.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(ConfigError::BadOverride(item.clone()));
        }
        let value = parse_value(raw.trim());
        let mut table = &mut *doc;
        for k in &keys[..keys.len() - 1] {
            let entry = table
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::BadOverride(item.clone()))?;
        }
        table.insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Parse TOML text; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        let mut cfg: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides)
    }

    /// Defaults only, with relative paths taken from the working directory.
    pub fn empty(overrides: &[String]) -> Result<Self> {
        Self::from_toml("", Path::new(""), overrides)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for p in [
            &mut self.data.train,
            &mut self.data.test,
            &mut self.data.test_ood,
            &mut self.pretrain.source,
            &mut self.plan.pretrained,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn train_path(&self) -> PathBuf {
        self.data.train.clone().unwrap_or_else(|| self.data_dir().join("train.tsv"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.data.test.clone().unwrap_or_else(|| self.data_dir().join("test.tsv"))
    }

    /// The OOD test file, if one is configured or `gen` is set to write one.
    pub fn test_ood_path(&self) -> Option<PathBuf> {
        self.data.test_ood.clone().or_else(|| {
            self.data
                .synth
                .as_ref()
                .and_then(|s| s.ood_shift)
                .map(|_| self.data_dir().join("test_ood.tsv"))
        })
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.plan
            .pretrained
            .clone()
            .unwrap_or_else(|| self.out.join("pretrain").join("model.ckpt"))
    }

    /// Short directory label for the configured imbalance, e.g. `ratio-0.1`.
    pub fn imbalance_label(&self) -> String {
        match &self.data.imbalance {
            None => "original".to_string(),
            Some(spec) => match &spec.variant {
                ImbalanceVariant::Ratio { ratio, .. } => format!("ratio-{ratio}"),
                ImbalanceVariant::Step { target_size, .. } => format!("step-{target_size}"),
                ImbalanceVariant::LongTail { mu } => format!("longtail-{mu}"),
            },
        }
    }

    pub fn model_spec(&self, num_classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim: self.data.feature_dim,
            backbone_dims: self.model.backbone_dims.clone(),
            final_dim: self.model.final_dim,
            num_classes,
        }
    }

    pub fn strategy(&self, kind: StrategyKind) -> Strategy {
        let finetune = |loss| self.plan.finetune.stage(loss, Trainable::All);
        match kind {
            StrategyKind::Vanilla => Strategy::Vanilla {
                stage: finetune(LossSpec::CrossEntropy),
            },
            StrategyKind::Ldam => Strategy::Ldam {
                stage: finetune(self.plan.ldam.loss()),
            },
            StrategyKind::TwoStage => Strategy::TwoStage {
                stage1: self
                    .plan
                    .stage1
                    .hyper
                    .stage(self.plan.stage1.loss.clone(), Trainable::FinalAndHead),
                stage2: finetune(LossSpec::CrossEntropy),
            },
        }
    }

    pub fn plan(&self, kind: StrategyKind) -> TrainPlan {
        TrainPlan {
            strategy: self.strategy(kind),
            seeds: self.plan.seeds.clone(),
            options: PlanOptions {
                reset_optimizer: self.plan.reset_optimizer,
                reinit_head: self.plan.reinit_head,
                adam: self.plan.adam,
            },
        }
    }

    /// Check every sub-spec. File existence is checked by each command, since
    /// some commands create the files others read.
    pub fn validate(&self) -> Result<()> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.data.feature_dim < 2 {
            return Err(ConfigError::Invalid("data.feature_dim must be at least 2".into()));
        }
        if self.data.ngram_max == 0 || self.data.max_tokens == 0 {
            return Err(ConfigError::Invalid(
                "data.ngram_max and data.max_tokens must be positive".into(),
            ));
        }
        if let Some(s) = &self.data.synth {
            s.spec.validate().map_err(|e| invalid(&e))?;
            s.test_spec().validate().map_err(|e| invalid(&e))?;
            if let Some(o) = s.ood_spec() {
                o.validate().map_err(|e| invalid(&e))?;
            }
        }
        if let Some(i) = &self.data.imbalance {
            i.validate().map_err(|e| invalid(&e))?;
        }
        if let Some(s) = &self.pretrain.synth {
            s.validate().map_err(|e| invalid(&e))?;
        }
        if !(self.pretrain.train_fraction > 0.0 && self.pretrain.train_fraction < 1.0) {
            return Err(ConfigError::Invalid("pretrain.train_fraction must lie in (0, 1)".into()));
        }
        self.model_spec(2).validate().map_err(|e| invalid(&e))?;
        self.pretrain
            .stage
            .stage(LossSpec::CrossEntropy, Trainable::All)
            .validate()
            .map_err(|e| invalid(&e))?;
        for kind in [StrategyKind::Vanilla, StrategyKind::Ldam, StrategyKind::TwoStage] {
            self.plan(kind).validate().map_err(|e| invalid(&e))?;
        }
        self.sweep.grid().validate().map_err(|e| invalid(&e))?;
        if !(self.sweep.train_fraction > 0.0 && self.sweep.train_fraction < 1.0) {
            return Err(ConfigError::Invalid("sweep.train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
