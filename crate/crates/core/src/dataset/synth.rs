use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, LabeledCorpus, Result, Sample};

/// Parameters of the synthetic bag-of-tokens generator.
///
/// Class `c` owns the token block `[c*B, (c+1)*B)` with `B = vocab_size /
/// num_classes`. Its token distribution is
/// `(1 - shift) * [(1 - separation) * uniform + separation * block_c] + shift * uniform`,
/// so `separation` controls how peaked a class is and `shift` blends towards
/// class-independent noise (used for out-of-distribution test sets).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub vocab_size: usize,
    pub doc_length: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DatasetError::InvalidParameter(msg));
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.vocab_size < self.num_classes {
            return bad(format!(
                "vocab_size {} must be at least num_classes {}",
                self.vocab_size, self.num_classes
            ));
        }
        if self.doc_length == 0 || self.samples_per_class == 0 {
            return bad("doc_length and samples_per_class must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.separation) || !(0.0..=1.0).contains(&self.shift) {
            return bad("separation and shift must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn block_size(&self) -> usize {
        self.vocab_size / self.num_classes
    }

    /// The class whose block contains `token`, if any.
    pub fn block_of(&self, token: u64) -> Option<usize> {
        let c = token as usize / self.block_size();
        (c < self.num_classes).then_some(c)
    }

    /// Probability of drawing `token` under class `class`.
    pub fn token_probability(&self, class: usize, token: u64) -> f64 {
        let v = self.vocab_size as f64;
        let in_block = self.block_of(token) == Some(class);
        let peaked = if in_block {
            1.0 / self.block_size() as f64
        } else {
            0.0
        };
        (1.0 - self.shift) * ((1.0 - self.separation) / v + self.separation * peaked)
            + self.shift / v
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<LabeledCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let block = spec.block_size() as u64;
    let vocab = spec.vocab_size as u64;
    // mixture weight of the class block; the remainder is uniform over the vocabulary
    let peaked_mass = (1.0 - spec.shift) * spec.separation;
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for class in 0..spec.num_classes {
        let start = class as u64 * block;
        for _ in 0..spec.samples_per_class {
            let tokens = (0..spec.doc_length)
                .map(|_| {
                    if rng.gen::<f64>() < peaked_mass {
                        start + rng.gen_range(0..block)
                    } else {
                        rng.gen_range(0..vocab)
                    }
                })
                .collect();
            samples.push(Sample {
                label: class,
                tokens,
            });
        }
    }
    let names = (0..spec.num_classes).map(|c| format!("c{c}")).collect();
    Ok(LabeledCorpus::from_parts_unchecked(samples, names))
}
