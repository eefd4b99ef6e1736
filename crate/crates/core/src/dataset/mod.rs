//! Labeled text corpora: loading, synthesis, imbalance transforms, splitting
//! and featurization.
//!
//! Every operation here is a pure function of its inputs and seed. Transforms
//! only ever remove samples and keep the survivors in their original relative
//! order.

mod features;
mod imbalance;
mod io;
mod split;
mod synth;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{featurize, FeatureMatrix};
pub use imbalance::{
    apply_imbalance, apply_longtail_imbalance, apply_ratio_imbalance, apply_step_imbalance,
    longtail_targets, ImbalanceSpec, ImbalanceVariant,
};
pub use io::{load_corpus, parse_corpus, token_id, write_corpus};
pub use split::split;
pub use synth::{generate_synthetic, SynthSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `label<TAB>text`")]
    MalformedLine { line: usize },
    #[error("corpus file {0} contains no samples")]
    EmptyFile(PathBuf),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("ratio imbalance needs exactly 2 classes, corpus has {0}")]
    NotTwoClasses(usize),
    #[error("ratio {requested} is infeasible: at most {achievable:.6} is achievable without adding samples")]
    InfeasibleRatio { requested: f64, achievable: f64 },
    #[error("step target {target} exceeds the {count} samples of class {class} ({name})")]
    StepTargetTooLarge {
        class: usize,
        name: String,
        count: usize,
        target: usize,
    },
    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("unknown class label `{0}`")]
    UnknownClass(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// One labeled document.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub label: usize,
    pub tokens: Vec<u64>,
}

/// Ordered samples plus the class catalog they index into.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledCorpus {
    samples: Vec<Sample>,
    class_names: Vec<String>,
}

impl LabeledCorpus {
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>) -> Result<Self> {
        let num_classes = class_names.len();
        let mut seen = HashSet::with_capacity(num_classes);
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::InvalidCorpus(format!(
                    "duplicate class name `{name}`"
                )));
            }
        }
        if num_classes == 0 && !samples.is_empty() {
            return Err(DatasetError::InvalidCorpus(
                "samples present but no classes".into(),
            ));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(DatasetError::ClassOutOfRange {
                class: s.label,
                num_classes,
            });
        }
        Ok(Self {
            samples,
            class_names,
        })
    }

    /// Build a corpus from samples already known to satisfy the invariants.
    pub(crate) fn from_parts_unchecked(samples: Vec<Sample>, class_names: Vec<String>) -> Self {
        debug_assert!(samples.iter().all(|s| s.label < class_names.len()));
        Self {
            samples,
            class_names,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Keep the samples whose positions are listed in `keep` (must be
    /// ascending), retaining the class catalog.
    pub(crate) fn retain_indices(&self, keep: &[usize]) -> Self {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let samples = keep.iter().map(|&i| self.samples[i].clone()).collect();
        Self::from_parts_unchecked(samples, self.class_names.clone())
    }

    /// Re-express labels against another class catalog (for example a test
    /// file whose labels appeared in a different order than in training).
    pub fn align_to(&self, class_names: &[String]) -> Result<Self> {
        let mapping = self
            .class_names
            .iter()
            .map(|n| {
                class_names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| DatasetError::UnknownClass(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                label: mapping[s.label],
                tokens: s.tokens.clone(),
            })
            .collect();
        Self::new(samples, class_names.to_vec())
    }

    /// Canonical TSV rendering (`name<TAB>t<id> t<id> ...`), one line per sample.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&self.class_names[s.label]);
            out.push('\t');
            for (i, t) in s.tokens.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "t{t}");
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical TSV rendering.
    pub fn fingerprint(&self) -> String {
        crate::hash::sha256_hex(self.to_tsv().as_bytes())
    }
}

/// Per-class sample counts of a corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
}

impl ClassHistogram {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// CSV with header `class,name,count`.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class,name,count\n");
        for (c, n) in self.counts.iter().enumerate() {
            let name = class_names.get(c).map(String::as_str).unwrap_or("");
            let _ = writeln!(out, "{c},{name},{n}");
        }
        out
    }
}

pub fn class_histogram(corpus: &LabeledCorpus) -> ClassHistogram {
    let mut counts = vec![0; corpus.num_classes()];
    for s in corpus.samples() {
        counts[s.label] += 1;
    }
    ClassHistogram { counts }
}

/// `floor(x)` that tolerates representation error just below an integer,
/// e.g. `0.29 * 100.0 = 28.999999999999996` floors to 29.
pub(crate) fn floor_count(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.floor().max(0.0) as usize
    }
}

#[cfg(test)]
pub(crate) fn corpus_from_labels(labels: &[usize], num_classes: usize) -> LabeledCorpus {
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Sample {
            label,
            tokens: vec![i as u64],
        })
        .collect();
    let names = (0..num_classes).map(|c| format!("c{c}")).collect();
    LabeledCorpus::new(samples, names).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_of_empty_corpus() {
        let corpus = LabeledCorpus::new(vec![], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(class_histogram(&corpus).counts, vec![0, 0, 0]);
    }

    #[test]
    fn histogram_counts_labels() {
        let corpus = corpus_from_labels(&[0, 0, 1], 2);
        let hist = class_histogram(&corpus);
        assert_eq!(hist.counts, vec![2, 1]);
        assert_eq!(hist.total(), corpus.len());
    }

    #[test]
    fn rejects_duplicate_names_and_bad_labels() {
        assert!(LabeledCorpus::new(vec![], vec!["a".into(), "a".into()]).is_err());
        let bad = vec![Sample {
            label: 2,
            tokens: vec![],
        }];
        assert!(matches!(
            LabeledCorpus::new(bad, vec!["a".into(), "b".into()]),
            Err(DatasetError::ClassOutOfRange { class: 2, .. })
        ));
        let orphan = vec![Sample {
            label: 0,
            tokens: vec![],
        }];
        assert!(LabeledCorpus::new(orphan, vec![]).is_err());
    }

    #[test]
    fn align_remaps_labels() {
        let corpus = corpus_from_labels(&[0, 1, 1], 2);
        let aligned = corpus
            .align_to(&["c1".to_string(), "c0".to_string()])
            .unwrap();
        assert_eq!(aligned.labels(), vec![1, 0, 0]);
        assert!(corpus.align_to(&["c0".to_string()]).is_err());
    }

    #[test]
    fn histogram_csv_layout() {
        let corpus = corpus_from_labels(&[0, 1, 1], 2);
        let csv = class_histogram(&corpus).to_csv(corpus.class_names());
        assert_eq!(csv, "class,name,count\n0,c0,1\n1,c1,2\n");
    }

    #[test]
    fn floor_count_guards_representation_error() {
        assert_eq!(floor_count(0.29 * 100.0), 29);
        assert_eq!(floor_count(0.2 * 37569.0), 7513);
        assert_eq!(floor_count(600.0 * 0.85f64.powi(19)), 27);
        assert_eq!(floor_count(2.5), 2);
    }
}
