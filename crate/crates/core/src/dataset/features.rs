use ndarray::{Array2, ArrayView2, Axis};

use super::{DatasetError, LabeledCorpus, Result};
use crate::hash::hash_token_ids;
use crate::real::Real;

/// Dense, row-per-sample features with aligned class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<F = f64> {
    values: Array2<F>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<F: Real> FeatureMatrix<F> {
    pub fn new(values: Array2<F>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if values.nrows() != labels.len() {
            return Err(DatasetError::InvalidParameter(format!(
                "{} feature rows but {} labels",
                values.nrows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DatasetError::ClassOutOfRange {
                class: l,
                num_classes,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidParameter(
                "feature matrix has non-finite entries".into(),
            ));
        }
        Ok(Self {
            values,
            labels,
            num_classes,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> ArrayView2<'_, F> {
        self.values.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gather the given rows (in the given order) into a fresh batch.
    pub fn select_rows(&self, rows: &[usize]) -> Array2<F> {
        self.values.select(Axis(0), rows)
    }

    pub fn cast<G: Real>(&self) -> FeatureMatrix<G> {
        FeatureMatrix {
            values: self.values.mapv(|v| G::from_f64_lossy(v.to_f64_lossy())),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// Hashed bag of 1..=`ngram_max`-grams, L2-normalized per row.
///
/// Each n-gram of token ids is hashed with FNV-1a 64 over the ids' 8-byte
/// little-endian encodings and the count lands at `hash % dim`. Rows of empty
/// documents stay all-zero.
pub fn featurize<F: Real>(
    corpus: &LabeledCorpus,
    dim: usize,
    ngram_max: usize,
) -> Result<FeatureMatrix<F>> {
    if dim < 2 {
        return Err(DatasetError::InvalidParameter(format!(
            "feature dim must be at least 2, got {dim}"
        )));
    }
    if ngram_max == 0 {
        return Err(DatasetError::InvalidParameter(
            "ngram_max must be positive".into(),
        ));
    }
    let mut values = Array2::<F>::zeros((corpus.len(), dim));
    let mut counts = vec![0.0f64; dim];
    for (mut row, sample) in values.outer_iter_mut().zip(corpus.samples()) {
        counts.iter_mut().for_each(|c| *c = 0.0);
        for n in 1..=ngram_max {
            for gram in sample.tokens.windows(n) {
                counts[(hash_token_ids(gram) % dim as u64) as usize] += 1.0;
            }
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (dst, &c) in row.iter_mut().zip(&counts) {
                *dst = F::from_f64_lossy(c / norm);
            }
        }
    }
    FeatureMatrix::new(values, corpus.labels(), corpus.num_classes())
}
