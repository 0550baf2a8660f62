use rand::seq::SliceRandom;

use super::{DatasetError, ManifestRecord};
use crate::rng::substream;
use crate::stage::{SleepStage, NUM_STAGES};

/// Indices (into `records`) of one class-balanced SGD epoch: every class is
/// undersampled without replacement to the minority count, then the union is
/// shuffled. Each `sgd_epoch` index draws from its own substream of `seed`.
pub fn balanced_epoch_indices(
    records: &[ManifestRecord],
    seed: u64,
    sgd_epoch: u64,
) -> Result<Vec<usize>, DatasetError> {
    let mut by_class: [Vec<usize>; NUM_STAGES] = Default::default();
    for (i, r) in records.iter().enumerate() {
        by_class[r.label.index()].push(i);
    }
    if let Some(missing) = by_class.iter().position(Vec::is_empty) {
        return Err(DatasetError::MissingClass(SleepStage::from_index(missing).unwrap()));
    }
    let m = by_class.iter().map(Vec::len).min().unwrap();
    let mut rng = substream(seed, sgd_epoch);
    let mut out = Vec::with_capacity(m * NUM_STAGES);
    for class in by_class.iter_mut() {
        class.shuffle(&mut rng);
        out.extend_from_slice(&class[..m]);
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Ids of one class-balanced SGD epoch.
pub fn balanced_epoch(records: &[ManifestRecord], seed: u64, sgd_epoch: u64) -> Result<Vec<String>, DatasetError> {
    Ok(balanced_epoch_indices(records, seed, sgd_epoch)?
        .into_iter()
        .map(|i| records[i].id.clone())
        .collect())
}
