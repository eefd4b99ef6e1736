//! Training: the optimizer, the per-stage loop, the three strategies,
//! pretraining and hyperparameter sweeps.
//!
//! A run for one seed starts from the pretrained parameters, re-initializes
//! the head (unless disabled), and executes the strategy's stages in order.
//! Two-stage runs first train only the final layer and head with a
//! class-balanced loss, then unfreeze everything and continue with plain
//! cross-entropy.

mod adam;
mod manifest;
mod sweep;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState, GroupMoments};
pub use manifest::{DataFingerprint, EpochRecord, RunManifest, SeedTrace};
pub use sweep::{sweep, SelectionMetric, SweepGrid, SweepOutcome, SweepRow};

use crate::dataset::{ClassHistogram, DatasetError, FeatureMatrix};
use crate::hash::mix_seed;
use crate::losses::{LossError, LossSpec};
use crate::metrics::{MetricsError, RunReport};
use crate::model::{ModelError, ModelSpec, ParamSet, Trainable};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

fn default_trainable() -> Trainable {
    Trainable::All
}

/// Hyperparameters of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub loss: LossSpec,
    #[serde(default = "default_trainable")]
    pub trainable: Trainable,
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl StageConfig {
    pub fn new(learning_rate: f64, epochs: usize, batch_size: usize, loss: LossSpec, trainable: Trainable) -> Self {
        Self {
            learning_rate,
            epochs,
            batch_size,
            loss,
            trainable,
            shuffle_seed: 0,
        }
    }

    /// Stage-1 defaults: LDAM with max margin 0.5 and scale 30, learning rate
    /// 1e-4, three epochs, final layer and head only.
    pub fn stage1_default() -> Self {
        Self::new(1e-4, 3, 16, LossSpec::ldam_default(), Trainable::FinalAndHead)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        self.loss.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum Strategy {
    Vanilla { stage: StageConfig },
    Ldam { stage: StageConfig },
    TwoStage { stage1: StageConfig, stage2: StageConfig },
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::Vanilla { .. } => "vanilla",
            Strategy::Ldam { .. } => "ldam",
            Strategy::TwoStage { .. } => "two-stage",
        }
    }

    /// `(stage label, config)` in execution order.
    pub fn stages(&self) -> Vec<(&'static str, &StageConfig)> {
        match self {
            Strategy::Vanilla { stage } | Strategy::Ldam { stage } => vec![("main", stage)],
            Strategy::TwoStage { stage1, stage2 } => vec![("stage1", stage1), ("stage2", stage2)],
        }
    }

    /// The stage whose epochs and learning rate a sweep tunes.
    pub(crate) fn tuned_stage_mut(&mut self) -> &mut StageConfig {
        match self {
            Strategy::Vanilla { stage } | Strategy::Ldam { stage } => stage,
            Strategy::TwoStage { stage2, .. } => stage2,
        }
    }

    pub fn tuned_stage(&self) -> &StageConfig {
        match self {
            Strategy::Vanilla { stage } | Strategy::Ldam { stage } => stage,
            Strategy::TwoStage { stage2, .. } => stage2,
        }
    }

    /// Role invariants: which groups train and which loss each stage uses.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        for (_, s) in self.stages() {
            s.validate()?;
        }
        match self {
            Strategy::Vanilla { stage } => {
                if stage.trainable != Trainable::All {
                    return bad("vanilla fine-tuning trains all layers");
                }
                if stage.loss != LossSpec::CrossEntropy {
                    return bad("vanilla fine-tuning uses cross-entropy");
                }
            }
            Strategy::Ldam { stage } => {
                if stage.trainable != Trainable::All {
                    return bad("LDAM fine-tuning trains all layers");
                }
                if !matches!(stage.loss, LossSpec::Ldam { .. }) {
                    return bad("LDAM fine-tuning uses the LDAM loss");
                }
            }
            Strategy::TwoStage { stage1, stage2 } => {
                if stage1.trainable != Trainable::FinalAndHead {
                    return bad("two-stage stage 1 trains only the final layer and head");
                }
                if stage2.trainable != Trainable::All {
                    return bad("two-stage stage 2 trains all layers");
                }
                if stage2.loss != LossSpec::CrossEntropy {
                    return bad("two-stage stage 2 uses cross-entropy");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Start stage 2 with fresh Adam moments.
    #[serde(default = "yes")]
    pub reset_optimizer: bool,
    /// Replace the pretrained head with a freshly initialized one per seed.
    #[serde(default = "yes")]
    pub reinit_head: bool,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn yes() -> bool {
    true
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            reset_optimizer: true,
            reinit_head: true,
            adam: AdamConfig::default(),
        }
    }
}

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub options: PlanOptions,
}

impl TrainPlan {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            seeds: DEFAULT_SEEDS.to_vec(),
            options: PlanOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(TrainError::InvalidConfig("at least one seed is required".into()));
        }
        self.strategy.validate()
    }
}

/// Mean training loss per epoch of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch_losses: Vec<f64>,
}

/// Mutable training state carried across the stages of one run.
#[derive(Clone, Debug)]
pub struct TrainState<F> {
    pub adam: AdamState<F>,
    /// Epochs completed so far in this run; keys the shuffle of the next one.
    pub epochs_done: usize,
}

impl<F: Real> TrainState<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        Self {
            adam: AdamState::zeros_like(params),
            epochs_done: 0,
        }
    }
}

pub fn histogram_of<F: Real>(data: &FeatureMatrix<F>) -> ClassHistogram {
    let mut counts = vec![0; data.num_classes()];
    for &l in data.labels() {
        counts[l] += 1;
    }
    ClassHistogram { counts }
}

fn epoch_order(n: usize, shuffle_seed: u64, run_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let seed = mix_seed(mix_seed(shuffle_seed, run_seed), epoch as u64);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Run one stage on `params`, continuing from `state`.
///
/// Applies the stage's trainable selection, fixes the loss constants from the
/// training histogram, then for each epoch draws a seeded permutation and
/// steps through it in mini-batches (the last, partial batch included).
pub fn train_stage_with_state<F: Real>(
    params: &mut ParamSet<F>,
    state: &mut TrainState<F>,
    train: &FeatureMatrix<F>,
    cfg: &StageConfig,
    run_seed: u64,
    adam_cfg: &AdamConfig,
) -> Result<EpochTrace> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if train.dim() != params.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: params.input_dim(),
            actual: train.dim(),
        }
        .into());
    }
    if train.num_classes() != params.num_classes() {
        return Err(TrainError::ShapeMismatch(format!(
            "data has {} classes, model head has {}",
            train.num_classes(),
            params.num_classes()
        )));
    }
    params.set_trainable(cfg.trainable);
    let loss = cfg.loss.resolve(&histogram_of(train))?;
    let lowest_trainable = params
        .groups()
        .iter()
        .position(|g| g.trainable)
        .unwrap_or(params.groups().len() - 1);
    let labels = train.labels();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        let order = epoch_order(train.rows(), cfg.shuffle_seed, run_seed, state.epochs_done);
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.values().select(Axis(0), chunk);
            batch_labels.clear();
            batch_labels.extend(chunk.iter().map(|&i| labels[i]));
            let (logits, cache) = params.forward(x.view())?;
            let out = loss.evaluate(logits.view(), &batch_labels)?;
            let grads = params.backward_down_to(&cache, out.dlogits.view(), lowest_trainable)?;
            adam_step(params, &grads, &mut state.adam, cfg.learning_rate, adam_cfg)?;
            total += out.loss.to_f64_lossy() * chunk.len() as f64;
        }
        let mean = total / train.rows() as f64;
        if !mean.is_finite() {
            return Err(TrainError::NonFinite {
                epoch: state.epochs_done,
            });
        }
        epoch_losses.push(mean);
        state.epochs_done += 1;
    }
    Ok(EpochTrace { epoch_losses })
}

/// Run one stage from a fresh optimizer state.
pub fn train_stage<F: Real>(
    params: &mut ParamSet<F>,
    train: &FeatureMatrix<F>,
    cfg: &StageConfig,
) -> Result<EpochTrace> {
    let mut state = TrainState::new(params);
    train_stage_with_state(params, &mut state, train, cfg, 0, &AdamConfig::default())
}

/// Parameters and loss trace of one finished seed.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub params: ParamSet<f32>,
    pub trace: Vec<EpochRecord>,
}

/// Train one seed of a strategy. Stage roles are not re-checked here, so
/// callers can run deliberately modified strategies.
pub fn train_seed(
    strategy: &Strategy,
    options: &PlanOptions,
    pretrained: &ParamSet<f32>,
    train: &FeatureMatrix<f32>,
    seed: u64,
) -> Result<SeedOutcome> {
    let mut params = pretrained.clone();
    if options.reinit_head {
        params.reinit_head(train.num_classes(), seed)?;
    } else if params.num_classes() != train.num_classes() {
        return Err(TrainError::ShapeMismatch(format!(
            "pretrained head has {} classes but the data has {}; enable head re-initialization",
            params.num_classes(),
            train.num_classes()
        )));
    }
    let mut state = TrainState::new(&params);
    let mut trace = Vec::new();
    for (i, (label, cfg)) in strategy.stages().into_iter().enumerate() {
        if i > 0 && options.reset_optimizer {
            state.adam = AdamState::zeros_like(&params);
        }
        let first_epoch = state.epochs_done;
        let stage_trace = train_stage_with_state(&mut params, &mut state, train, cfg, seed, &options.adam)?;
        trace.extend(
            stage_trace
                .epoch_losses
                .into_iter()
                .enumerate()
                .map(|(e, mean_loss)| EpochRecord {
                    stage: label.to_string(),
                    epoch: first_epoch + e,
                    mean_loss,
                }),
        );
    }
    Ok(SeedOutcome { seed, params, trace })
}

/// Train every seed of a validated plan. Outcomes follow the plan's seed order.
pub fn train_plan(
    plan: &TrainPlan,
    pretrained: &ParamSet<f32>,
    train: &FeatureMatrix<f32>,
) -> Result<Vec<SeedOutcome>> {
    plan.validate()?;
    plan.seeds
        .par_iter()
        .map(|&seed| train_seed(&plan.strategy, &plan.options, pretrained, train, seed))
        .collect()
}

/// Predict every test row in fixed-size chunks and score the predictions.
pub fn evaluate(
    params: &ParamSet<f32>,
    test: &FeatureMatrix<f32>,
    strategy: &str,
    seed: u64,
) -> Result<RunReport> {
    if test.num_classes() != params.num_classes() {
        return Err(TrainError::ShapeMismatch(format!(
            "test data has {} classes, model predicts {}",
            test.num_classes(),
            params.num_classes()
        )));
    }
    let mut pred = Vec::with_capacity(test.rows());
    for chunk in test.values().axis_chunks_iter(Axis(0), 512) {
        pred.extend(params.predict(chunk)?);
    }
    Ok(RunReport::evaluate(strategy, seed, test.labels(), &pred, test.num_classes())?)
}

/// Train every seed, then evaluate each on `test`.
pub fn run_plan(
    plan: &TrainPlan,
    pretrained: &ParamSet<f32>,
    train: &FeatureMatrix<f32>,
    test: &FeatureMatrix<f32>,
) -> Result<Vec<RunReport>> {
    let outcomes = train_plan(plan, pretrained, train)?;
    outcomes
        .iter()
        .map(|o| evaluate(&o.params, test, plan.strategy.tag(), o.seed))
        .collect()
}

/// Train a fresh model on a (balanced) source task with cross-entropy.
pub fn pretrain(
    spec: &ModelSpec,
    source_train: &FeatureMatrix<f32>,
    cfg: &StageConfig,
    seed: u64,
) -> Result<(ParamSet<f32>, EpochTrace)> {
    if cfg.trainable != Trainable::All {
        return Err(TrainError::InvalidConfig("pretraining trains all layers".into()));
    }
    if cfg.loss != LossSpec::CrossEntropy {
        return Err(TrainError::InvalidConfig("pretraining uses cross-entropy".into()));
    }
    if spec.num_classes != source_train.num_classes() {
        return Err(TrainError::ShapeMismatch(format!(
            "model spec has {} classes, source data has {}",
            spec.num_classes,
            source_train.num_classes()
        )));
    }
    let mut params = ParamSet::init(spec, seed)?;
    let mut state = TrainState::new(&params);
    let trace = train_stage_with_state(&mut params, &mut state, source_train, cfg, seed, &AdamConfig::default())?;
    Ok((params, trace))
}
