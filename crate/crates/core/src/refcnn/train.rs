use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::network::{image_to_input, loss_and_gradients, predict, ModelParams};
use super::spec::{ModelSpec, DESK_ARCH};
use super::ModelError;
use crate::dataset::{balanced_epoch_indices, Manifest, ManifestRecord};
use crate::imaging::decode_png;
use crate::rng::substream;

/// Examples converted to network inputs at a time during evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: String,
    /// height, width, channels
    pub input_shape: [usize; 3],
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: DESK_ARCH.to_string(),
            input_shape: [224, 224, 3],
            dropout_rate: 0.5,
            batch_size: 250,
            adam: AdamConfig::default(),
            patience: 5,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn spec(&self) -> Result<ModelSpec, ModelError> {
        ModelSpec::parse(&self.arch, self.input_shape, self.dropout_rate)
    }

    fn derived_seed(&self, tag: u64) -> u64 {
        substream(self.seed, tag).next_u64()
    }

    pub fn init_seed(&self) -> u64 {
        self.derived_seed(0)
    }

    pub fn balance_seed(&self) -> u64 {
        self.derived_seed(1)
    }

    fn dropout_seed(&self) -> u64 {
        self.derived_seed(2)
    }
}

/// Decoded images (HWC bytes) with their manifest records.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub shape: [usize; 3],
    pub images: Vec<Vec<u8>>,
    pub records: Vec<ManifestRecord>,
}

impl ImageSet {
    pub fn new(shape: [usize; 3], images: Vec<Vec<u8>>, records: Vec<ManifestRecord>) -> Result<Self, ModelError> {
        let expected: usize = shape.iter().product();
        if images.len() != records.len() {
            return Err(ModelError::ShapeMismatch {
                expected: records.len(),
                actual: images.len(),
            });
        }
        if let Some(bad) = images.iter().find(|i| i.len() != expected) {
            return Err(ModelError::ShapeMismatch {
                expected,
                actual: bad.len(),
            });
        }
        Ok(ImageSet { shape, images, records })
    }

    /// Decode every PNG in the manifest; images must be `shape` RGB.
    pub fn load(manifest: &Manifest, shape: [usize; 3]) -> Result<Self, ModelError> {
        if shape[2] != 3 {
            return Err(ModelError::InvalidSpec(format!("{} input channels; PNG corpora are RGB", shape[2])));
        }
        let mut images = Vec::with_capacity(manifest.len());
        for r in &manifest.records {
            let img = decode_png(&r.image_path)?;
            if img.height != shape[0] || img.width != shape[1] {
                return Err(ModelError::ShapeMismatch {
                    expected: shape[0] * shape[1] * 3,
                    actual: img.data.len(),
                });
            }
            images.push(img.data);
        }
        ImageSet::new(shape, images, manifest.records.clone())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label.index()).collect()
    }

    pub fn inputs(&self, idx: &[usize]) -> Vec<Vec<f32>> {
        let [h, w, c] = self.shape;
        idx.iter().map(|&i| image_to_input(&self.images[i], h, w, c)).collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Inference-mode probabilities for every image in `set`, in order.
pub fn predict_set(params: &ModelParams<f32>, set: &ImageSet) -> Result<Vec<Vec<f32>>, ModelError> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = set.inputs(chunk);
        let refs: Vec<&[f32]> = x.iter().map(Vec::as_slice).collect();
        out.extend(predict(params, &refs)?);
    }
    Ok(out)
}

pub fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy in inference mode.
pub fn evaluate(params: &ModelParams<f32>, set: &ImageSet) -> Result<(f64, f64), ModelError> {
    if set.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let probs = predict_set(params, set)?;
    let labels = set.labels();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, &t) in probs.iter().zip(&labels) {
        loss -= (p[t].max(f32::MIN_POSITIVE) as f64).ln();
        correct += usize::from(argmax(p) == t);
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

/// Stateful trainer: one call to [`Trainer::sgd_epoch`] per balanced epoch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
    pub epochs_done: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, ModelError> {
        if config.batch_size == 0 {
            return Err(ModelError::InvalidSpec("batch_size must be positive".into()));
        }
        let spec = config.spec()?;
        let params = ModelParams::<f32>::init_xavier(&spec, config.init_seed())?;
        let adam = AdamState::new(&params, config.adam);
        Ok(Trainer {
            params,
            adam,
            config,
            epochs_done: 0,
        })
    }

    /// Balanced resample, then minibatch Adam updates over it. Returns the
    /// mean training loss (dropout active).
    pub fn sgd_epoch(&mut self, train: &ImageSet) -> Result<f64, ModelError> {
        let epoch = self.epochs_done;
        let order = balanced_epoch_indices(&train.records, self.config.balance_seed(), epoch)?;
        let labels = train.labels();
        let dropout_base = self.config.dropout_seed();
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let x = train.inputs(batch);
            let refs: Vec<&[f32]> = x.iter().map(Vec::as_slice).collect();
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let dropout_seed = dropout_base.wrapping_add(self.adam.step);
            let r = loss_and_gradients(&self.params, &refs, &y, true, dropout_seed, false)?;
            if !r.loss.is_finite() {
                return Err(ModelError::DivergedLoss { epoch: epoch + 1 });
            }
            total += r.loss * batch.len() as f64;
            adam_step(&mut self.params, &r.grads, &mut self.adam)?;
        }
        if !self.params.is_finite() {
            return Err(ModelError::DivergedLoss { epoch: epoch + 1 });
        }
        self.epochs_done += 1;
        Ok(total / order.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: ModelParams<f32>,
    pub log: Vec<EpochLog>,
    /// 1-based epoch of `params`.
    pub best_epoch: u64,
    /// Optimizer steps taken when `params` were saved.
    pub best_step: u64,
}

/// Train with early stopping: after each epoch the validation loss is
/// compared with the best so far, and training stops once it has failed to
/// improve on `patience` consecutive epochs (at the first failure when
/// `patience` is 0). An empty validation set falls back to the training set.
pub fn train(
    config: &TrainConfig,
    train_set: &ImageSet,
    val_set: &ImageSet,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    let mut trainer = Trainer::new(config.clone())?;
    let val = if val_set.is_empty() {
        log::warn!("empty validation set; stopping on training loss");
        train_set
    } else {
        val_set
    };
    let mut best_loss = f64::INFINITY;
    let mut best = (trainer.params.clone(), 0u64, 0u64);
    let mut bad = 0usize;
    let mut log = Vec::new();
    for _ in 0..config.max_epochs {
        let train_loss = trainer.sgd_epoch(train_set)?;
        let (val_loss, val_accuracy) = evaluate(&trainer.params, val)?;
        let entry = EpochLog {
            epoch: trainer.epochs_done,
            train_loss,
            val_loss,
            val_accuracy,
        };
        on_epoch(&entry);
        log.push(entry);
        if !val_loss.is_finite() {
            return Err(ModelError::DivergedLoss {
                epoch: trainer.epochs_done,
            });
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best = (trainer.params.clone(), trainer.epochs_done, trainer.adam.step);
            bad = 0;
        } else {
            bad += 1;
            if bad >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        log,
        best_epoch: best.1,
        best_step: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::SleepStage;

    fn toy_set(n_per_class: usize) -> ImageSet {
        let mut images = Vec::new();
        let mut records = Vec::new();
        for c in 0..5 {
            for k in 0..n_per_class {
                // class c lights up one quadrant-ish band of an 8×8 image
                let mut img = vec![0u8; 8 * 8 * 3];
                for y in 0..8 {
                    for x in 0..8 {
                        let on = (y + x) % 5 == c;
                        img[(y * 8 + x) * 3 + (c % 3)] = if on { 250 } else { (k * 7 % 40) as u8 };
                    }
                }
                images.push(img);
                records.push(ManifestRecord {
                    id: format!("{c}_{k}"),
                    subject: "s".into(),
                    night: 1,
                    epoch_index: records.len(),
                    label: SleepStage::from_index(c).unwrap(),
                    image_path: "unused.png".into(),
                });
            }
        }
        ImageSet::new([8, 8, 3], images, records).unwrap()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            arch: "cm4 fcr16 fcs5".into(),
            input_shape: [8, 8, 3],
            dropout_rate: 0.0,
            batch_size: 5,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            patience: 3,
            max_epochs: 30,
            seed: 1,
        }
    }

    #[test]
    fn patience_zero_stops_at_first_non_improving_epoch() {
        let set = toy_set(4);
        let mut cfg = toy_config();
        cfg.patience = 0;
        cfg.adam.lr = 5.0; // large steps make a non-improving epoch come quickly
        let out = train(&cfg, &set, &set, |_| {}).unwrap();
        let n = out.log.len();
        let losses: Vec<f64> = out.log.iter().map(|e| e.val_loss).collect();
        let mut best = f64::INFINITY;
        for (i, &l) in losses.iter().enumerate() {
            if l >= best {
                assert_eq!(i + 1, n, "stopped late: {losses:?}");
            }
            best = best.min(l);
        }
        let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(losses[out.best_epoch as usize - 1], min);
    }

    #[test]
    fn learns_toy_problem_and_logs_stopping_losses() {
        let set = toy_set(6);
        let cfg = toy_config();
        let mut seen = Vec::new();
        let out = train(&cfg, &set, &set, |e| seen.push(e.clone())).unwrap();
        assert_eq!(seen, out.log);
        let (_, acc) = evaluate(&out.params, &set).unwrap();
        assert!(acc > 0.8, "accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let set = toy_set(3);
        let mut cfg = toy_config();
        cfg.max_epochs = 3;
        cfg.dropout_rate = 0.5;
        cfg.arch = "cm4 fcr16 fcs5".into();
        let a = train(&cfg, &set, &set, |_| {}).unwrap();
        let b = train(&cfg, &set, &set, |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }
}
