//! Confusion matrices, F1 scores and multi-seed aggregation.
//!
//! Division by zero in precision, recall or F1 yields 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("gold has {gold} entries but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("class index {index} out of range for {num_classes} classes")]
    IndexOutOfRange { index: usize, num_classes: usize },
    #[error("no samples were evaluated")]
    Empty,
    #[error("nothing to aggregate")]
    NoReports,
    #[error("reports disagree on the number of classes ({0} vs {1})")]
    IncongruentReports(usize, usize),
    #[error("malformed report CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// `m[gold][pred]` counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    m: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(m: Vec<Vec<u64>>) -> Result<Self> {
        let k = m.len();
        if let Some(row) = m.iter().find(|r| r.len() != k) {
            return Err(MetricsError::IncongruentReports(k, row.len()));
        }
        Ok(Self { m })
    }

    pub fn num_classes(&self) -> usize {
        self.m.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.m
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.m[gold][pred]
    }

    pub fn total(&self) -> u64 {
        self.m.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.m[c][c]).sum()
    }

    fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.m[c][c];
        let predicted: u64 = self.m.iter().map(|row| row[c]).sum();
        let actual: u64 = self.m[c].iter().sum();
        (tp, predicted - tp, actual - tp)
    }
}

pub fn confusion(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        if let Some(index) = [g, p].into_iter().find(|&i| i >= num_classes) {
            return Err(MetricsError::IndexOutOfRange { index, num_classes });
        }
        m[g][p] += 1;
    }
    Ok(ConfusionMatrix { m })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn per_class_prf(cm: &ConfusionMatrix, class: usize) -> ClassScores {
    let (tp, fp, fn_) = cm.tp_fp_fn(class);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    ClassScores {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

/// F1 from true/false positives and negatives pooled over classes.
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in 0..cm.num_classes() {
        let (a, b, d) = cm.tp_fp_fn(c);
        tp += a;
        fp += b;
        fn_ += d;
    }
    // 2tp / (2tp + fp + fn): algebraically the harmonic mean of pooled
    // precision and recall, without the extra rounding of two divisions
    Ok(ratio(2 * tp, 2 * tp + fp + fn_))
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let k = cm.num_classes();
    Ok((0..k).map(|c| per_class_prf(cm, c).f1).sum::<f64>() / k as f64)
}

pub fn top1_error(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(1.0 - cm.trace() as f64 / cm.total() as f64)
}

/// Everything measured for one (strategy, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassScores>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub top1_error: f64,
}

impl RunReport {
    pub fn from_confusion(strategy: impl Into<String>, seed: u64, confusion: ConfusionMatrix) -> Result<Self> {
        let per_class = (0..confusion.num_classes())
            .map(|c| per_class_prf(&confusion, c))
            .collect();
        Ok(Self {
            strategy: strategy.into(),
            seed,
            micro_f1: micro_f1(&confusion)?,
            macro_f1: macro_f1(&confusion)?,
            top1_error: top1_error(&confusion)?,
            per_class,
            confusion,
        })
    }

    pub fn evaluate(
        strategy: impl Into<String>,
        seed: u64,
        gold: &[usize],
        pred: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        Self::from_confusion(strategy, seed, confusion(gold, pred, num_classes)?)
    }

    /// Named scalar metrics in a fixed order: `micro_f1`, `macro_f1`,
    /// `top1_error`, then `f1_<class>`, `precision_<class>`, `recall_<class>`.
    pub fn named_metrics(&self, class_names: &[String]) -> Vec<(String, f64)> {
        let mut out = vec![
            ("micro_f1".to_string(), self.micro_f1),
            ("macro_f1".to_string(), self.macro_f1),
            ("top1_error".to_string(), self.top1_error),
        ];
        for (c, s) in self.per_class.iter().enumerate() {
            let name = class_label(class_names, c);
            out.push((format!("f1_{name}"), s.f1));
            out.push((format!("precision_{name}"), s.precision));
            out.push((format!("recall_{name}"), s.recall));
        }
        out
    }
}

fn class_label(class_names: &[String], c: usize) -> String {
    class_names.get(c).cloned().unwrap_or_else(|| c.to_string())
}

/// Fixed output precision for every CSV metric value.
pub fn fmt_metric(v: f64) -> String {
    format!("{v:.5}")
}

pub const RUN_CSV_HEADER: &str = "strategy,seed,class,precision,recall,f1";
pub const RUN_SUMMARY_HEADER: &str = "strategy,seed,micro_f1,macro_f1,top1_error";

/// Per-class rows, a blank line, then one summary row per run.
pub fn run_reports_csv(reports: &[RunReport], class_names: &[String]) -> String {
    let mut out = String::new();
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for r in reports {
        for (c, s) in r.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.strategy,
                r.seed,
                class_label(class_names, c),
                fmt_metric(s.precision),
                fmt_metric(s.recall),
                fmt_metric(s.f1)
            );
        }
    }
    out.push('\n');
    out.push_str(RUN_SUMMARY_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.strategy,
            r.seed,
            fmt_metric(r.micro_f1),
            fmt_metric(r.macro_f1),
            fmt_metric(r.top1_error)
        );
    }
    out
}

/// One run as recovered from a report CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRun {
    pub strategy: String,
    pub seed: u64,
    pub classes: Vec<String>,
    pub per_class: Vec<ClassScores>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub top1_error: f64,
}

pub fn parse_run_reports_csv(text: &str) -> Result<Vec<ParsedRun>> {
    let bad = |line: usize, reason: &str| MetricsError::MalformedCsv {
        line,
        reason: reason.to_string(),
    };
    let num = |line: usize, s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| bad(line, "expected a number"))
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h == RUN_CSV_HEADER => {}
        _ => return Err(bad(1, "missing per-class header")),
    }
    let mut runs: Vec<ParsedRun> = Vec::new();
    let mut summary_started = false;
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if line == RUN_SUMMARY_HEADER {
            summary_started = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if !summary_started {
            if cols.len() != 6 {
                return Err(bad(n, "expected 6 columns"));
            }
            let seed = cols[1].parse().map_err(|_| bad(n, "bad seed"))?;
            let scores = ClassScores {
                precision: num(n, cols[3])?,
                recall: num(n, cols[4])?,
                f1: num(n, cols[5])?,
            };
            match runs
                .iter_mut()
                .find(|r| r.strategy == cols[0] && r.seed == seed)
            {
                Some(r) => {
                    r.classes.push(cols[2].to_string());
                    r.per_class.push(scores);
                }
                None => runs.push(ParsedRun {
                    strategy: cols[0].to_string(),
                    seed,
                    classes: vec![cols[2].to_string()],
                    per_class: vec![scores],
                    micro_f1: f64::NAN,
                    macro_f1: f64::NAN,
                    top1_error: f64::NAN,
                }),
            }
        } else {
            if cols.len() != 5 {
                return Err(bad(n, "expected 5 columns"));
            }
            let seed: u64 = cols[1].parse().map_err(|_| bad(n, "bad seed"))?;
            let run = runs
                .iter_mut()
                .find(|r| r.strategy == cols[0] && r.seed == seed)
                .ok_or_else(|| bad(n, "summary row without per-class rows"))?;
            run.micro_f1 = num(n, cols[2])?;
            run.macro_f1 = num(n, cols[3])?;
            run.top1_error = num(n, cols[4])?;
        }
    }
    if let Some(r) = runs.iter().find(|r| r.micro_f1.is_nan()) {
        return Err(MetricsError::MalformedCsv {
            line: 0,
            reason: format!("run {}/{} has no summary row", r.strategy, r.seed),
        });
    }
    Ok(runs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`;
/// zero for a single value).
pub fn mean_stderr(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary {
            mean: f64::NAN,
            stderr: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MetricSummary { mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MetricSummary {
        mean,
        stderr: (var / n as f64).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub strategy: String,
    pub num_seeds: usize,
    pub metrics: Vec<(String, MetricSummary)>,
}

impl AggregateReport {
    pub fn get(&self, name: &str) -> Option<MetricSummary> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    /// CSV with header `metric,mean,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,stderr\n");
        for (name, s) in &self.metrics {
            let _ = writeln!(out, "{name},{},{}", fmt_metric(s.mean), fmt_metric(s.stderr));
        }
        out
    }
}

pub fn aggregate(reports: &[RunReport], class_names: &[String]) -> Result<AggregateReport> {
    let first = reports.first().ok_or(MetricsError::NoReports)?;
    let k = first.per_class.len();
    if let Some(r) = reports.iter().find(|r| r.per_class.len() != k) {
        return Err(MetricsError::IncongruentReports(k, r.per_class.len()));
    }
    let per_run: Vec<Vec<(String, f64)>> = reports.iter().map(|r| r.named_metrics(class_names)).collect();
    let metrics = per_run[0]
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let values: Vec<f64> = per_run.iter().map(|m| m[i].1).collect();
            (name.clone(), mean_stderr(&values))
        })
        .collect();
    Ok(AggregateReport {
        strategy: first.strategy.clone(),
        num_seeds: reports.len(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(m: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(m).unwrap()
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&[0, 1], &[0, 1], 2).unwrap(), cm(vec![vec![1, 0], vec![0, 1]]));
        assert_eq!(confusion(&[], &[], 2).unwrap(), cm(vec![vec![0, 0], vec![0, 0]]));
        assert_eq!(
            confusion(&[0, 0, 1], &[1, 0, 1], 2).unwrap(),
            cm(vec![vec![1, 1], vec![0, 1]])
        );
        assert!(matches!(
            confusion(&[0], &[0, 1], 2),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[0], &[2], 2),
            Err(MetricsError::IndexOutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn prf_examples() {
        let perfect = cm(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]]);
        for c in 0..3 {
            let s = per_class_prf(&perfect, c);
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        let m = cm(vec![vec![1, 1], vec![0, 1]]);
        let s = per_class_prf(&m, 0);
        assert_eq!((s.precision, s.recall), (1.0, 0.5));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);

        let absent = cm(vec![vec![2, 0], vec![0, 0]]);
        let s = per_class_prf(&absent, 1);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn summary_metric_examples() {
        let m = cm(vec![vec![1, 1], vec![0, 1]]);
        assert!((micro_f1(&m).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((top1_error(&m).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let wrong = cm(vec![vec![0, 4], vec![3, 0]]);
        assert_eq!(micro_f1(&wrong).unwrap(), 0.0);
        assert_eq!(top1_error(&wrong).unwrap(), 1.0);
        assert_eq!(macro_f1(&wrong).unwrap(), 0.0);
        let empty = cm(vec![vec![0, 0], vec![0, 0]]);
        assert_eq!(micro_f1(&empty), Err(MetricsError::Empty));
        assert_eq!(macro_f1(&empty), Err(MetricsError::Empty));
        assert_eq!(top1_error(&empty), Err(MetricsError::Empty));
    }

    fn report_with_micro(v: f64) -> RunReport {
        let mut r = RunReport::evaluate("vanilla", 0, &[0, 1], &[0, 1], 2).unwrap();
        r.micro_f1 = v;
        r
    }

    #[test]
    fn aggregate_examples() {
        let names = vec!["a".to_string(), "b".to_string()];
        let one = aggregate(&[report_with_micro(0.7)], &names).unwrap();
        assert_eq!(one.get("micro_f1"), Some(MetricSummary { mean: 0.7, stderr: 0.0 }));
        let two = aggregate(&[report_with_micro(0.8), report_with_micro(1.0)], &names).unwrap();
        let s = two.get("micro_f1").unwrap();
        assert!((s.mean - 0.9).abs() < 1e-12);
        assert!((s.stderr - 0.1).abs() < 1e-12);
        assert_eq!(two.get("f1_a").unwrap().stderr, 0.0);
        assert_eq!(aggregate(&[], &names), Err(MetricsError::NoReports));
        assert!(two.to_csv().starts_with("metric,mean,stderr\nmicro_f1,0.90000,0.10000\n"));
    }

    #[test]
    fn csv_roundtrip() {
        let names = vec!["neg".to_string(), "pos".to_string()];
        let reports = vec![
            RunReport::evaluate("vanilla", 3, &[0, 0, 1], &[1, 0, 1], 2).unwrap(),
            RunReport::evaluate("two-stage", 4, &[0, 0, 1], &[0, 0, 1], 2).unwrap(),
        ];
        let csv = run_reports_csv(&reports, &names);
        assert!(csv.starts_with("strategy,seed,class,precision,recall,f1\nvanilla,3,neg,1.00000,0.50000,0.66667\n"));
        let parsed = parse_run_reports_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].classes, names);
        assert_eq!(parsed[0].micro_f1, 0.66667);
        assert_eq!(parsed[1].top1_error, 0.0);
        assert!(parse_run_reports_csv("nope").is_err());
    }

    fn random_pairs(seed: u64, n: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (rng.gen_range(0..k), rng.gen_range(0..k))).unzip()
    }

    proptest! {
        #[test]
        fn micro_f1_is_accuracy(seed in any::<u64>(), n in 1usize..300, k in 1usize..8) {
            let (gold, pred) = random_pairs(seed, n, k);
            let m = confusion(&gold, &pred, k).unwrap();
            prop_assert_eq!(micro_f1(&m).unwrap(), m.trace() as f64 / m.total() as f64);
        }

        #[test]
        fn prf_matches_pairwise_count(seed in any::<u64>(), n in 0usize..200, k in 1usize..6) {
            let (gold, pred) = random_pairs(seed, n, k);
            let m = confusion(&gold, &pred, k).unwrap();
            for c in 0..k {
                let tp = gold.iter().zip(&pred).filter(|(g, p)| **g == c && **p == c).count();
                let fp = gold.iter().zip(&pred).filter(|(g, p)| **g != c && **p == c).count();
                let fn_ = gold.iter().zip(&pred).filter(|(g, p)| **g == c && **p != c).count();
                let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                let s = per_class_prf(&m, c);
                prop_assert_eq!((s.precision, s.recall, s.f1), (p, r, f));
            }
        }

        #[test]
        fn metrics_permutation_invariant(seed in any::<u64>(), n in 1usize..100, k in 2usize..5) {
            let (gold, pred) = random_pairs(seed, n, k);
            let mut order: Vec<usize> = (0..n).collect();
            order.reverse();
            order.rotate_left((seed % n as u64) as usize);
            let g2: Vec<usize> = order.iter().map(|&i| gold[i]).collect();
            let p2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
            let a = RunReport::evaluate("x", 0, &gold, &pred, k).unwrap();
            let b = RunReport::evaluate("x", 0, &g2, &p2, k).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!((0.0..=1.0).contains(&a.macro_f1));
        }

        #[test]
        fn aggregate_mean_within_range(values in proptest::collection::vec(0.0f64..1.0, 1..10)) {
            let reports: Vec<RunReport> = values.iter().map(|&v| report_with_micro(v)).collect();
            let agg = aggregate(&reports, &[]).unwrap();
            let s = agg.get("micro_f1").unwrap();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s.mean >= lo - 1e-12 && s.mean <= hi + 1e-12);
            prop_assert!(s.stderr >= 0.0);
        }
    }
}
