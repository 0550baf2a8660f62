//! A small VGG-style convolutional network written from scratch: 3×3
//! convolutions with ReLU, 2×2 max-pooling, fully connected layers, dropout,
//! softmax cross-entropy, Adam, and exact gradients with respect to the
//! parameters and the input pixels.
//!
//! The network is generic over [`Scalar`]; training runs in `f32` and the
//! `f64` instantiation exists for finite-difference gradient checks.

mod adam;
mod checkpoint;
mod network;
mod scalar;
mod spec;
mod train;

use std::path::PathBuf;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, LayerEntry, CHECKPOINT_FILE};
pub use network::{
    backward, chw_to_hwc, forward, image_to_input, loss, loss_and_gradients, predict, BackwardResult, ExampleCache,
    ForwardCache, Gradients, LayerParams, ModelParams,
};
pub use scalar::Scalar;
pub use spec::{LayerKind, LayerSpec, ModelSpec, Shape, DESK_ARCH, VGG16_ARCH};
pub use train::{argmax, evaluate, predict_set, train, EpochLog, ImageSet, TrainConfig, TrainOutcome, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: u64 },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}
