use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::rng::substream;

/// One leave-one-subject-out partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub test_subject: String,
    pub validation_subjects: Vec<String>,
    pub train_subjects: Vec<String>,
    pub seed: u64,
}

impl FoldSpec {
    pub fn all_subjects(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.test_subject)
            .chain(&self.validation_subjects)
            .chain(&self.train_subjects)
    }
}

/// Validation subjects per fold: four for six or more subjects, otherwise
/// `max(1, ⌊0.2·(n−1)⌋)`.
pub fn validation_count(n_subjects: usize) -> usize {
    if n_subjects >= 6 {
        4
    } else {
        ((0.2 * (n_subjects as f64 - 1.0)).floor() as usize).max(1)
    }
}

/// One fold per subject as test subject; validation subjects are drawn by a
/// seeded shuffle of the rest (fold `k` uses substream `k`).
pub fn make_folds(subjects: &[String], seed: u64) -> Result<Vec<FoldSpec>, DatasetError> {
    let mut unique: Vec<String> = Vec::new();
    for s in subjects {
        if !unique.contains(s) {
            unique.push(s.clone());
        }
    }
    let n = unique.len();
    if n < 2 {
        return Err(DatasetError::TooFewSubjects(n));
    }
    let n_val = validation_count(n);
    let mut folds = Vec::with_capacity(n);
    for (k, test) in unique.iter().enumerate() {
        let mut rest: Vec<String> = unique.iter().filter(|s| *s != test).cloned().collect();
        let mut rng = substream(seed, k as u64);
        rest.shuffle(&mut rng);
        let train = rest.split_off(n_val.min(rest.len()));
        if train.is_empty() {
            log::warn!("fold {k} (test subject {test}) has no training subjects");
        }
        folds.push(FoldSpec {
            test_subject: test.clone(),
            validation_subjects: rest,
            train_subjects: train,
            seed,
        });
    }
    Ok(folds)
}
