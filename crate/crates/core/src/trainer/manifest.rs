use serde::{Deserialize, Serialize};

use crate::dataset::{ClassHistogram, ImbalanceSpec, LabeledCorpus};
use crate::model::ModelSpec;

use super::TrainPlan;

/// Content hash of a corpus, taken from its canonical TSV form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub role: String,
    pub path: Option<String>,
    pub samples: usize,
    pub sha256: String,
}

impl DataFingerprint {
    pub fn of(role: impl Into<String>, path: Option<String>, corpus: &LabeledCorpus) -> Self {
        Self {
            role: role.into(),
            path,
            samples: corpus.len(),
            sha256: corpus.fingerprint(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    /// Epoch index counted across all stages of the run.
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTrace {
    pub seed: u64,
    pub checkpoint: Option<String>,
    pub epochs: Vec<EpochRecord>,
}

/// Reproducibility record written next to the checkpoints of a run.
///
/// `data` lists fingerprints in the order the corpora were read: the training
/// set first, the test set only after training finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub strategy: String,
    pub plan: TrainPlan,
    pub model: ModelSpec,
    pub class_names: Vec<String>,
    pub train_histogram: ClassHistogram,
    pub imbalance: Option<ImbalanceSpec>,
    pub data: Vec<DataFingerprint>,
    pub seeds: Vec<SeedTrace>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn fingerprint(&self, role: &str) -> Option<&DataFingerprint> {
        self.data.iter().find(|d| d.role == role)
    }
}
