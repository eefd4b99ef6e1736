use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_plan, Result, StageConfig, TrainError, TrainPlan};
use crate::dataset::FeatureMatrix;
use crate::metrics::{fmt_metric, mean_stderr, RunReport};
use crate::model::ParamSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    MicroF1,
    MacroF1,
}

impl SelectionMetric {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMetric::MicroF1 => "micro_f1",
            SelectionMetric::MacroF1 => "macro_f1",
        }
    }

    fn of(self, r: &RunReport) -> f64 {
        match self {
            SelectionMetric::MicroF1 => r.micro_f1,
            SelectionMetric::MacroF1 => r.macro_f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub epochs_set: Vec<usize>,
    pub lr_set: Vec<f64>,
    #[serde(default)]
    pub selection_metric: SelectionMetric,
}

impl Default for SweepGrid {
    /// Epochs 1 through 6 crossed with four learning rates.
    fn default() -> Self {
        Self {
            epochs_set: (1..=6).collect(),
            lr_set: vec![1e-5, 5e-5, 1e-4, 5e-4],
            selection_metric: SelectionMetric::MicroF1,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_set.is_empty() || self.lr_set.is_empty() {
            return Err(TrainError::InvalidConfig("sweep grid sets must be non-empty".into()));
        }
        if self.epochs_set.contains(&0) {
            return Err(TrainError::InvalidConfig("sweep epochs must be at least 1".into()));
        }
        if let Some(lr) = self.lr_set.iter().find(|lr| !(**lr > 0.0 && lr.is_finite())) {
            return Err(TrainError::InvalidConfig(format!("sweep learning rate {lr} is not positive")));
        }
        Ok(())
    }

    /// Grid cells, epochs-major, in the order given.
    pub fn cells(&self) -> Vec<(usize, f64)> {
        self.epochs_set
            .iter()
            .flat_map(|&e| self.lr_set.iter().map(move |&lr| (e, lr)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Seed-mean of the selection metric on the validation set.
    pub mean: f64,
    pub stderr: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub best: StageConfig,
    pub metric: SelectionMetric,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn best_row(&self) -> &SweepRow {
        self.rows.iter().find(|r| r.selected).expect("a sweep always selects a row")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epochs,learning_rate,metric,mean,stderr,selected\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epochs,
                r.learning_rate,
                self.metric.name(),
                fmt_metric(r.mean),
                fmt_metric(r.stderr),
                u8::from(r.selected)
            );
        }
        out
    }
}

/// True when `a` should be preferred over the current best `b`.
fn better(a: &SweepRow, b: &SweepRow) -> bool {
    if a.mean != b.mean {
        return a.mean > b.mean;
    }
    if a.learning_rate != b.learning_rate {
        return a.learning_rate < b.learning_rate;
    }
    a.epochs < b.epochs
}

/// Train every (epochs, learning rate) cell of `grid` on `train`, score on
/// `val`, and pick the best by the seed-mean of the selection metric. Ties go
/// to the lower learning rate, then fewer epochs.
///
/// The tuned stage is the single stage of a one-stage strategy or stage 2 of
/// the two-stage strategy.
pub fn sweep(
    grid: &SweepGrid,
    template: &TrainPlan,
    pretrained: &ParamSet<f32>,
    train: &FeatureMatrix<f32>,
    val: &FeatureMatrix<f32>,
) -> Result<SweepOutcome> {
    grid.validate()?;
    template.validate()?;
    let cells = grid.cells();
    let scored: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(epochs, lr)| {
            let mut plan = template.clone();
            let stage = plan.strategy.tuned_stage_mut();
            stage.epochs = epochs;
            stage.learning_rate = lr;
            let reports = run_plan(&plan, pretrained, train, val)?;
            let values: Vec<f64> = reports.iter().map(|r| grid.selection_metric.of(r)).collect();
            let s = mean_stderr(&values);
            Ok(SweepRow {
                epochs,
                learning_rate: lr,
                mean: s.mean,
                stderr: s.stderr,
                selected: false,
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = scored;
    let mut best = 0;
    for i in 1..rows.len() {
        if better(&rows[i], &rows[best]) {
            best = i;
        }
    }
    rows[best].selected = true;
    let mut best_stage = template.strategy.tuned_stage().clone();
    best_stage.epochs = rows[best].epochs;
    best_stage.learning_rate = rows[best].learning_rate;
    Ok(SweepOutcome {
        best: best_stage,
        metric: grid.selection_metric,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epochs: usize, lr: f64, mean: f64) -> SweepRow {
        SweepRow {
            epochs,
            learning_rate: lr,
            mean,
            stderr: 0.0,
            selected: false,
        }
    }

    #[test]
    fn default_grid_has_24_cells() {
        let g = SweepGrid::default();
        assert_eq!(g.cells().len(), 24);
        assert_eq!(g.cells()[0], (1, 1e-5));
        assert_eq!(g.cells()[23], (6, 5e-4));
    }

    #[test]
    fn tie_break_prefers_lower_lr_then_fewer_epochs() {
        assert!(better(&row(3, 1e-4, 0.8), &row(1, 5e-4, 0.8)));
        assert!(!better(&row(1, 5e-4, 0.8), &row(3, 1e-4, 0.8)));
        assert!(better(&row(2, 1e-4, 0.8), &row(3, 1e-4, 0.8)));
        assert!(better(&row(6, 5e-4, 0.81), &row(1, 1e-5, 0.8)));
    }

    #[test]
    fn empty_grid_rejected() {
        let g = SweepGrid {
            epochs_set: vec![],
            lr_set: vec![0.1],
            selection_metric: SelectionMetric::MicroF1,
        };
        assert!(g.validate().is_err());
        let g = SweepGrid {
            epochs_set: vec![1],
            lr_set: vec![-0.1],
            selection_metric: SelectionMetric::MicroF1,
        };
        assert!(g.validate().is_err());
    }
}
