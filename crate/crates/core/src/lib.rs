//! Two-stage fine-tuning for class-imbalanced classification.
//!
//! The crate bundles everything needed to run the comparison end to end at
//! desk scale:
//!
//! - [`dataset`]: TSV corpora, a synthetic text generator, the ratio / step /
//!   long-tail imbalance transforms, stratified splits and hashed n-gram
//!   featurization.
//! - [`model`]: a feed-forward classifier partitioned into backbone, final
//!   layer and head, with analytic backprop, freezing and checkpoints.
//! - [`losses`]: cross-entropy, class reweighting schemes and the LDAM margin
//!   loss.
//! - [`trainer`]: Adam, the stage loop, the vanilla / LDAM / two-stage
//!   strategies, pretraining and hyperparameter sweeps.
//! - [`metrics`]: confusion matrices, F1 scores and multi-seed aggregation.
//! - [`cli`]: the `twostage` command-line driver.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod hash;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod real;
pub mod trainer;

pub use dataset::{ClassHistogram, FeatureMatrix, ImbalanceSpec, LabeledCorpus, Sample, SynthSpec};
pub use losses::{ClassWeights, LdamSpec, LossSpec};
pub use metrics::{AggregateReport, ConfusionMatrix, RunReport};
pub use model::{ModelSpec, ParamSet, Trainable};
pub use real::Real;
pub use trainer::{StageConfig, Strategy, SweepGrid, TrainPlan};
