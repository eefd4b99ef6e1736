use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_histogram, floor_count, DatasetError, LabeledCorpus, Result};
use crate::hash::mix_seed;

/// How to carve an imbalanced training set out of a (roughly) balanced one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ImbalanceVariant {
    /// Two-class corpora: shrink `minority_class` to `floor(ratio * majority)`.
    Ratio { minority_class: usize, ratio: f64 },
    /// Shrink every listed class to exactly `target_size`.
    Step {
        minority_classes: BTreeSet<usize>,
        target_size: usize,
    },
    /// Exponential profile: the class of rank `i` keeps `floor(N_max * mu^i)`.
    #[serde(rename = "longtail")]
    LongTail { mu: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    #[serde(flatten)]
    pub variant: ImbalanceVariant,
    #[serde(default)]
    pub seed: u64,
}

impl ImbalanceSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.variant {
            ImbalanceVariant::Ratio { ratio, .. } => {
                if !(*ratio > 0.0 && *ratio <= 1.0) {
                    return Err(DatasetError::InvalidParameter(format!(
                        "ratio must lie in (0, 1], got {ratio}"
                    )));
                }
            }
            ImbalanceVariant::Step { target_size, .. } => {
                if *target_size == 0 {
                    return Err(DatasetError::InvalidParameter(
                        "step target_size must be positive".into(),
                    ));
                }
            }
            ImbalanceVariant::LongTail { mu } => {
                if !(*mu > 0.0 && *mu <= 1.0) {
                    return Err(DatasetError::InvalidParameter(format!(
                        "mu must lie in (0, 1], got {mu}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The imbalance ratio, for ratio-type specs.
    pub fn ratio(&self) -> Option<f64> {
        match self.variant {
            ImbalanceVariant::Ratio { ratio, .. } => Some(ratio),
            _ => None,
        }
    }
}

pub fn apply_imbalance(corpus: &LabeledCorpus, spec: &ImbalanceSpec) -> Result<LabeledCorpus> {
    spec.validate()?;
    match &spec.variant {
        ImbalanceVariant::Ratio {
            minority_class,
            ratio,
        } => apply_ratio_imbalance(corpus, *minority_class, *ratio, spec.seed),
        ImbalanceVariant::Step {
            minority_classes,
            target_size,
        } => apply_step_imbalance(corpus, minority_classes, *target_size, spec.seed),
        ImbalanceVariant::LongTail { mu } => apply_longtail_imbalance(corpus, *mu, spec.seed),
    }
}

/// Down-sample each class to the given target count. Classes whose target
/// equals their count are left untouched; the caller guarantees targets never
/// exceed counts.
fn downsample_to(corpus: &LabeledCorpus, targets: &[usize], seed: u64) -> LabeledCorpus {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); corpus.num_classes()];
    for (i, s) in corpus.samples().iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut keep = Vec::with_capacity(targets.iter().sum());
    for (class, positions) in by_class.iter().enumerate() {
        let target = targets[class];
        debug_assert!(target <= positions.len());
        if target == positions.len() {
            keep.extend_from_slice(positions);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, class as u64));
        let chosen = rand::seq::index::sample(&mut rng, positions.len(), target);
        keep.extend(chosen.into_iter().map(|j| positions[j]));
    }
    keep.sort_unstable();
    corpus.retain_indices(&keep)
}

pub fn apply_ratio_imbalance(
    corpus: &LabeledCorpus,
    minority_class: usize,
    ratio: f64,
    seed: u64,
) -> Result<LabeledCorpus> {
    if corpus.num_classes() != 2 {
        return Err(DatasetError::NotTwoClasses(corpus.num_classes()));
    }
    if minority_class >= 2 {
        return Err(DatasetError::ClassOutOfRange {
            class: minority_class,
            num_classes: 2,
        });
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(DatasetError::InvalidParameter(format!(
            "ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let counts = class_histogram(corpus).counts;
    let majority = counts[1 - minority_class];
    let minority = counts[minority_class];
    let target = floor_count(ratio * majority as f64);
    if target > minority {
        let achievable = if majority == 0 {
            0.0
        } else {
            minority as f64 / majority as f64
        };
        return Err(DatasetError::InfeasibleRatio {
            requested: ratio,
            achievable,
        });
    }
    let mut targets = counts.clone();
    targets[minority_class] = target;
    Ok(downsample_to(corpus, &targets, seed))
}

pub fn apply_step_imbalance(
    corpus: &LabeledCorpus,
    minority_classes: &BTreeSet<usize>,
    target_size: usize,
    seed: u64,
) -> Result<LabeledCorpus> {
    let counts = class_histogram(corpus).counts;
    let mut targets = counts.clone();
    for &class in minority_classes {
        if class >= corpus.num_classes() {
            return Err(DatasetError::ClassOutOfRange {
                class,
                num_classes: corpus.num_classes(),
            });
        }
        if target_size > counts[class] {
            return Err(DatasetError::StepTargetTooLarge {
                class,
                name: corpus.class_names()[class].clone(),
                count: counts[class],
                target: target_size,
            });
        }
        targets[class] = target_size;
    }
    Ok(downsample_to(corpus, &targets, seed))
}

/// Target counts of the long-tail transform, indexed by class.
///
/// Ranks follow descending original count with ties broken by ascending class
/// index; rank `i` targets `max(1, floor(N_max * mu^i))`, capped at the class's
/// own count.
pub fn longtail_targets(counts: &[usize], mu: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let n_max = order.first().map(|&c| counts[c]).unwrap_or(0);
    let mut targets = vec![0; counts.len()];
    for (rank, &class) in order.iter().enumerate() {
        let ideal = floor_count(n_max as f64 * mu.powi(rank as i32)).max(1);
        targets[class] = ideal.min(counts[class]);
    }
    targets
}

pub fn apply_longtail_imbalance(corpus: &LabeledCorpus, mu: f64, seed: u64) -> Result<LabeledCorpus> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(DatasetError::InvalidParameter(format!(
            "mu must lie in (0, 1], got {mu}"
        )));
    }
    let counts = class_histogram(corpus).counts;
    let targets = longtail_targets(&counts, mu);
    Ok(downsample_to(corpus, &targets, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::corpus_from_labels;
    use proptest::prelude::*;

    fn corpus_with_counts(counts: &[usize]) -> LabeledCorpus {
        // interleave classes so order preservation is actually exercised
        let mut labels = Vec::new();
        let max = counts.iter().copied().max().unwrap_or(0);
        for i in 0..max {
            for (c, &n) in counts.iter().enumerate() {
                if i < n {
                    labels.push(c);
                }
            }
        }
        corpus_from_labels(&labels, counts.len())
    }

    fn is_subsequence(sub: &LabeledCorpus, full: &LabeledCorpus) -> bool {
        let mut it = full.samples().iter();
        sub.samples().iter().all(|s| it.any(|f| f == s))
    }

    #[test]
    fn sst2_ratio_point_two() {
        let corpus = corpus_with_counts(&[37569, 29780]);
        let out = apply_ratio_imbalance(&corpus, 1, 0.2, 0).unwrap();
        assert_eq!(class_histogram(&out).counts, vec![37569, 7513]);
        assert!(is_subsequence(&out, &corpus));
    }

    #[test]
    fn ratio_one_on_balanced_is_identity() {
        let corpus = corpus_with_counts(&[100, 100]);
        assert_eq!(apply_ratio_imbalance(&corpus, 0, 1.0, 9).unwrap(), corpus);
    }

    #[test]
    fn ratio_is_seed_deterministic() {
        let corpus = corpus_with_counts(&[200, 200]);
        let a = apply_ratio_imbalance(&corpus, 1, 0.3, 5).unwrap();
        let b = apply_ratio_imbalance(&corpus, 1, 0.3, 5).unwrap();
        let c = apply_ratio_imbalance(&corpus, 1, 0.3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ratio_errors() {
        let three = corpus_with_counts(&[5, 5, 5]);
        assert!(matches!(
            apply_ratio_imbalance(&three, 0, 0.5, 0),
            Err(DatasetError::NotTwoClasses(3))
        ));
        let two = corpus_with_counts(&[100, 30]);
        match apply_ratio_imbalance(&two, 1, 0.5, 0) {
            Err(DatasetError::InfeasibleRatio { achievable, .. }) => {
                assert!((achievable - 0.3).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_reduces_ten_of_twenty_classes_to_59() {
        let counts: Vec<usize> = (0..20).map(|c| 591 + (c * 7) % 10).collect();
        let corpus = corpus_with_counts(&counts);
        let minority: BTreeSet<usize> = (0..20).step_by(2).collect();
        let out = apply_step_imbalance(&corpus, &minority, 59, 3).unwrap();
        let hist = class_histogram(&out).counts;
        for c in 0..20 {
            if minority.contains(&c) {
                assert_eq!(hist[c], 59);
            } else {
                assert_eq!(hist[c], counts[c]);
            }
        }
        assert!(is_subsequence(&out, &corpus));
    }

    #[test]
    fn step_edge_cases() {
        let corpus = corpus_with_counts(&[10, 20]);
        assert_eq!(
            apply_step_imbalance(&corpus, &BTreeSet::new(), 5, 0).unwrap(),
            corpus
        );
        let one: BTreeSet<usize> = [0].into();
        assert_eq!(apply_step_imbalance(&corpus, &one, 10, 0).unwrap(), corpus);
        let err = apply_step_imbalance(&corpus, &one, 11, 0).unwrap_err();
        assert!(err.to_string().contains("class 0"));
    }

    #[test]
    fn longtail_tail_is_27() {
        let corpus = corpus_with_counts(&[600; 20]);
        let out = apply_longtail_imbalance(&corpus, 0.85, 0).unwrap();
        let hist = class_histogram(&out).counts;
        assert_eq!(hist[0], 600);
        assert_eq!(hist[19], 27);
        for c in 0..20 {
            let expected = (600.0 * 0.85f64.powi(c as i32)).floor() as usize;
            assert_eq!(hist[c], expected, "class {c}");
        }
    }

    #[test]
    fn longtail_mu_one_is_identity() {
        let corpus = corpus_with_counts(&[7, 3, 5]);
        assert_eq!(apply_longtail_imbalance(&corpus, 1.0, 0).unwrap(), corpus);
    }

    #[test]
    fn longtail_tie_ranks_by_class_index() {
        assert_eq!(longtail_targets(&[10, 10, 10], 0.5), vec![10, 5, 2]);
        assert_eq!(longtail_targets(&[4, 10, 10], 0.5), vec![2, 10, 5]);
        // never rounds a class away entirely
        assert_eq!(longtail_targets(&[100, 100, 100], 0.01), vec![100, 1, 1]);
    }

    /// Brute-force reference: sort counts descending, walk ranks.
    fn reference_sizes_by_rank(counts: &[usize], mu: f64) -> Vec<usize> {
        let mut sorted: Vec<(usize, usize)> = counts.iter().copied().enumerate().collect();
        sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let n_max = sorted[0].1 as f64;
        sorted
            .iter()
            .enumerate()
            .map(|(rank, &(_, n))| {
                let mut ideal = n_max;
                for _ in 0..rank {
                    ideal *= mu;
                }
                ((ideal + 1e-9).floor() as usize).max(1).min(n)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn longtail_counts_non_increasing_in_rank(
            counts in proptest::collection::vec(1usize..80, 1..8),
            mu in 0.05f64..=1.0,
            seed in any::<u64>(),
        ) {
            let corpus = corpus_with_counts(&counts);
            let out = apply_longtail_imbalance(&corpus, mu, seed).unwrap();
            let hist = class_histogram(&out).counts;
            let mut order: Vec<usize> = (0..counts.len()).collect();
            order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
            let by_rank: Vec<usize> = order.iter().map(|&c| hist[c]).collect();
            prop_assert!(by_rank.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(by_rank, reference_sizes_by_rank(&counts, mu));
            prop_assert!(is_subsequence(&out, &corpus));
        }

        #[test]
        fn transforms_only_remove(
            counts in proptest::collection::vec(1usize..40, 2),
            ratio in 0.01f64..=1.0,
            seed in any::<u64>(),
        ) {
            let corpus = corpus_with_counts(&counts);
            let min_class = if counts[0] <= counts[1] { 0 } else { 1 };
            if let Ok(out) = apply_ratio_imbalance(&corpus, min_class, ratio, seed) {
                prop_assert!(is_subsequence(&out, &corpus));
                let hist = class_histogram(&out).counts;
                prop_assert_eq!(hist[1 - min_class], counts[1 - min_class]);
                prop_assert_eq!(hist[min_class], floor_count(ratio * counts[1 - min_class] as f64));
            } else {
                prop_assert!(floor_count(ratio * counts[1 - min_class] as f64) > counts[min_class]);
            }
        }
    }
}
