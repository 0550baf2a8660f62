//! Leave-one-subject-out partitions, class-balanced SGD epochs, image
//! manifests and the synthetic desk-scale corpus.

mod balance;
mod folds;
mod manifest;
pub mod synth;

pub use balance::{balanced_epoch, balanced_epoch_indices};
pub use folds::{make_folds, validation_count, FoldSpec};
pub use manifest::{Manifest, ManifestRecord};
pub use synth::{stage_plan, synth_recording, SyntheticNight};

use crate::stage::SleepStage;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("need at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("class {0} has no examples")]
    MissingClass(SleepStage),
    #[error("duplicate manifest id {0}")]
    DuplicateId(String),
    #[error("{path}:{line}: {message}")]
    MalformedManifest { path: String, line: usize, message: String },
    #[error("manifest references missing image {0}")]
    MissingImage(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}
