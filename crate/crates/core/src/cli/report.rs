use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{CliError, Result};
use crate::dataset::ImbalanceVariant;
use crate::metrics::{fmt_metric, mean_stderr, parse_run_reports_csv, MetricSummary, ParsedRun};
use crate::trainer::RunManifest;

/// One `train` output directory, reduced to what the report needs.
#[derive(Clone, Debug)]
pub struct ReportInput {
    /// Imbalance setting: the ratio for ratio-type runs, else a short label.
    pub setting: String,
    pub ratio: Option<f64>,
    pub strategy: String,
    pub class_names: Vec<String>,
    pub train_counts: Vec<usize>,
    pub runs: Vec<ParsedRun>,
}

impl ReportInput {
    pub fn new(manifest: &RunManifest, report_csv: &str) -> Result<Self> {
        let runs = parse_run_reports_csv(report_csv)?;
        if runs.is_empty() {
            return Err(CliError::Input(format!("no runs in the {} report", manifest.strategy)));
        }
        if let Some(r) = runs.iter().find(|r| r.classes != manifest.class_names) {
            return Err(CliError::Input(format!(
                "report classes {:?} differ from manifest classes {:?}",
                r.classes, manifest.class_names
            )));
        }
        let (setting, ratio) = match manifest.imbalance.as_ref().map(|i| &i.variant) {
            None => ("original".to_string(), None),
            Some(ImbalanceVariant::Ratio { ratio, .. }) => (ratio.to_string(), Some(*ratio)),
            Some(ImbalanceVariant::Step { target_size, .. }) => (format!("step-{target_size}"), None),
            Some(ImbalanceVariant::LongTail { mu }) => (format!("longtail-{mu}"), None),
        };
        Ok(Self {
            setting,
            ratio,
            strategy: manifest.strategy.clone(),
            class_names: manifest.class_names.clone(),
            train_counts: manifest.train_histogram.counts.clone(),
            runs,
        })
    }

    fn summary(&self, metric: impl Fn(&ParsedRun) -> f64) -> MetricSummary {
        mean_stderr(&self.runs.iter().map(metric).collect::<Vec<_>>())
    }

    fn micro(&self) -> MetricSummary {
        self.summary(|r| r.micro_f1)
    }

    fn class_f1(&self, c: usize) -> MetricSummary {
        self.summary(|r| r.per_class[c].f1)
    }
}

/// Report outputs as CSV / Markdown text.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTables {
    /// `ratio,strategy,micro_f1,micro_f1_improvement,<class>_f1,<class>_f1_improvement,...`
    pub table1: String,
    /// The same table with improvements in parentheses, one block per setting.
    pub table1_markdown: String,
    /// `ratio,strategy,metric,mean,stderr`
    pub ratio_curve: String,
    /// `ratio,strategy,class,train_count,f1_mean,f1_stderr`, most frequent class first.
    pub per_class: String,
}

fn strategy_rank(s: &str) -> (usize, &str) {
    let rank = match s {
        "vanilla" => 0,
        "ldam" => 1,
        "two-stage" => 2,
        _ => 3,
    };
    (rank, s)
}

fn display_name(s: &str) -> String {
    match s {
        "vanilla" => "Vanilla".into(),
        "ldam" => "LDAM".into(),
        "two-stage" => "Two-stage".into(),
        other => other.into(),
    }
}

fn signed(v: f64) -> String {
    format!("{v:+.5}")
}

/// Group runs by imbalance setting and compare each strategy with the
/// vanilla baseline of the same setting. Improvements are differences of
/// seed means. With `improvements` set, a setting without a vanilla run is an
/// error; otherwise its improvement cells are left empty.
pub fn build_report(inputs: &[ReportInput], improvements: bool) -> Result<ReportTables> {
    let first = inputs
        .first()
        .ok_or_else(|| CliError::Input("report needs at least one run directory".into()))?;
    let classes = &first.class_names;
    if let Some(i) = inputs.iter().find(|i| &i.class_names != classes) {
        return Err(CliError::Input(format!(
            "run directories disagree on classes: {:?} vs {:?}",
            classes, i.class_names
        )));
    }
    // settings ordered by ratio, then label; strategies in a fixed order
    let mut groups: BTreeMap<(u64, String), Vec<&ReportInput>> = BTreeMap::new();
    for i in inputs {
        let key = (i.ratio.map_or(u64::MAX, f64::to_bits), i.setting.clone());
        groups.entry(key).or_default().push(i);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| strategy_rank(&a.strategy).cmp(&strategy_rank(&b.strategy)));
        if let Some(w) = g.windows(2).find(|w| w[0].strategy == w[1].strategy) {
            return Err(CliError::Input(format!(
                "two run directories for strategy {} at setting {}",
                w[0].strategy, w[0].setting
            )));
        }
    }

    let mut table1 = String::from("ratio,strategy,micro_f1,micro_f1_improvement");
    for c in classes {
        let _ = write!(table1, ",{c}_f1,{c}_f1_improvement");
    }
    table1.push('\n');
    let mut md = String::new();
    let mut curve = String::from("ratio,strategy,metric,mean,stderr\n");
    let mut per_class = String::from("ratio,strategy,class,train_count,f1_mean,f1_stderr\n");

    for group in groups.values() {
        let setting = &group[0].setting;
        let baseline = group.iter().find(|i| i.strategy == "vanilla");
        if improvements && baseline.is_none() {
            return Err(CliError::Input(format!(
                "no vanilla baseline for setting {setting}; pass --no-improvements to report without one"
            )));
        }
        let _ = writeln!(md, "Imbalance setting: {setting}\n");
        let _ = write!(md, "| Method | Micro F1 |");
        for c in classes {
            let _ = write!(md, " {c} F1 |");
        }
        let _ = write!(md, "\n|---|---|");
        md.push_str(&"---|".repeat(classes.len()));
        md.push('\n');

        for input in group {
            let base = baseline.filter(|b| b.strategy != input.strategy);
            let cell = |mine: MetricSummary, theirs: Option<MetricSummary>| {
                let csv = format!(
                    "{},{}",
                    fmt_metric(mine.mean),
                    theirs.map(|t| signed(mine.mean - t.mean)).unwrap_or_default()
                );
                let md = match theirs {
                    Some(t) => format!("{:.4} ({:+.4})", mine.mean, mine.mean - t.mean),
                    None => format!("{:.4}", mine.mean),
                };
                (csv, md)
            };
            let (csv, mdc) = cell(input.micro(), base.map(|b| b.micro()));
            let _ = write!(table1, "{setting},{},{csv}", input.strategy);
            let _ = write!(md, "| {} | {mdc} |", display_name(&input.strategy));
            for c in 0..classes.len() {
                let (csv, mdc) = cell(input.class_f1(c), base.map(|b| b.class_f1(c)));
                let _ = write!(table1, ",{csv}");
                let _ = write!(md, " {mdc} |");
            }
            table1.push('\n');
            md.push('\n');

            let mut metrics = vec![
                ("micro_f1".to_string(), input.micro()),
                ("macro_f1".to_string(), input.summary(|r| r.macro_f1)),
            ];
            metrics.extend((0..classes.len()).map(|c| (format!("f1_{}", classes[c]), input.class_f1(c))));
            for (name, s) in metrics {
                let _ = writeln!(
                    curve,
                    "{setting},{},{name},{},{}",
                    input.strategy,
                    fmt_metric(s.mean),
                    fmt_metric(s.stderr)
                );
            }

            let mut order: Vec<usize> = (0..classes.len()).collect();
            order.sort_by_key(|&c| (std::cmp::Reverse(input.train_counts.get(c).copied().unwrap_or(0)), c));
            for c in order {
                let s = input.class_f1(c);
                let _ = writeln!(
                    per_class,
                    "{setting},{},{},{},{},{}",
                    input.strategy,
                    classes[c],
                    input.train_counts.get(c).copied().unwrap_or(0),
                    fmt_metric(s.mean),
                    fmt_metric(s.stderr)
                );
            }
        }
        md.push('\n');
    }
    Ok(ReportTables {
        table1,
        table1_markdown: md,
        ratio_curve: curve,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ClassScores;

    fn input(setting: f64, strategy: &str, micro: &[f64], minority_f1: &[f64]) -> ReportInput {
        ReportInput {
            setting: setting.to_string(),
            ratio: Some(setting),
            strategy: strategy.into(),
            class_names: vec!["neg".into(), "pos".into()],
            train_counts: vec![50, 500],
            runs: micro
                .iter()
                .zip(minority_f1)
                .enumerate()
                .map(|(seed, (&m, &f))| ParsedRun {
                    strategy: strategy.into(),
                    seed: seed as u64,
                    classes: vec!["neg".into(), "pos".into()],
                    per_class: vec![
                        ClassScores {
                            precision: f,
                            recall: f,
                            f1: f,
                        },
                        ClassScores {
                            precision: 0.9,
                            recall: 0.9,
                            f1: 0.9,
                        },
                    ],
                    micro_f1: m,
                    macro_f1: (f + 0.9) / 2.0,
                    top1_error: 1.0 - m,
                })
                .collect(),
        }
    }

    #[test]
    fn vanilla_alone_has_empty_improvements() {
        let t = build_report(&[input(0.1, "vanilla", &[0.8, 0.9], &[0.5, 0.7])], true).unwrap();
        let lines: Vec<&str> = t.table1.lines().collect();
        assert_eq!(
            lines[0],
            "ratio,strategy,micro_f1,micro_f1_improvement,neg_f1,neg_f1_improvement,pos_f1,pos_f1_improvement"
        );
        assert_eq!(lines[1], "0.1,vanilla,0.85000,,0.60000,,0.90000,");
    }

    #[test]
    fn improvement_is_difference_of_means() {
        let t = build_report(
            &[
                input(0.1, "two-stage", &[0.8865], &[0.70]),
                input(0.1, "vanilla", &[0.8823], &[0.60]),
            ],
            true,
        )
        .unwrap();
        let lines: Vec<&str> = t.table1.lines().collect();
        assert!(lines[1].starts_with("0.1,vanilla,"));
        assert_eq!(lines[2], "0.1,two-stage,0.88650,+0.00420,0.70000,+0.10000,0.90000,+0.00000");
        assert!(t.table1_markdown.contains("| Two-stage | 0.8865 (+0.0042) | 0.7000 (+0.1000) |"));
        // per-class rows: most frequent class first
        let pc: Vec<&str> = t.per_class.lines().collect();
        assert!(pc[1].starts_with("0.1,vanilla,pos,500,"));
    }

    #[test]
    fn missing_vanilla_is_an_error_unless_disabled() {
        let runs = [input(0.1, "two-stage", &[0.9], &[0.7])];
        assert!(build_report(&runs, true).is_err());
        let t = build_report(&runs, false).unwrap();
        assert_eq!(t.table1.lines().nth(1).unwrap(), "0.1,two-stage,0.90000,,0.70000,,0.90000,");
    }

    #[test]
    fn ratio_sweep_rows() {
        let mut inputs = Vec::new();
        for r in [0.7, 0.1, 0.4, 0.2, 0.3, 0.5, 0.6] {
            for s in ["vanilla", "two-stage"] {
                inputs.push(input(r, s, &[0.8], &[0.6]));
            }
        }
        let t = build_report(&inputs, true).unwrap();
        assert_eq!(t.table1.lines().count(), 1 + 14);
        let settings: Vec<&str> = t.table1.lines().skip(1).step_by(2).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(settings, ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7"]);
        // micro, macro and one F1 per class for every (ratio, strategy)
        assert_eq!(t.ratio_curve.lines().count(), 1 + 14 * 4);
    }

    #[test]
    fn duplicate_strategy_rejected() {
        let runs = [input(0.1, "vanilla", &[0.9], &[0.7]), input(0.1, "vanilla", &[0.9], &[0.7])];
        assert!(build_report(&runs, true).is_err());
    }
}
