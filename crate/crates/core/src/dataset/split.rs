use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{floor_count, DatasetError, LabeledCorpus, Result};
use crate::hash::mix_seed;

/// Stratified split: each class sends `floor(train_fraction * n_c)` of its
/// samples (chosen by a seeded shuffle) to the first corpus and the rest to
/// the second. Both halves keep the input's relative order.
pub fn split(
    corpus: &LabeledCorpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus)> {
    if corpus.is_empty() {
        return Err(DatasetError::InvalidParameter(
            "cannot split an empty corpus".into(),
        ));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); corpus.num_classes()];
    for (i, s) in corpus.samples().iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut in_train = vec![false; corpus.len()];
    for (class, mut positions) in by_class.into_iter().enumerate() {
        let n_train = floor_count(train_fraction * positions.len() as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, class as u64));
        positions.shuffle(&mut rng);
        for &p in &positions[..n_train] {
            in_train[p] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..corpus.len()).partition(|&i| in_train[i]);
    Ok((corpus.retain_indices(&train), corpus.retain_indices(&test)))
}
