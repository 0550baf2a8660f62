//! # sleepvis
//!
//! Single-channel EEG sleep staging as a visual recognition problem.
//!
//! The pipeline turns an overnight EEG recording into one multitaper
//! time-frequency image per scored 30 s epoch (with two epochs of context on
//! each side), trains a convolutional classifier over those images, renders
//! gradient sensitivity maps, and evaluates with class-balanced one-vs-all
//! metrics and bootstrap confidence intervals.
//!
//! ```text
//! EDF/EDF+ -> ingest -> multitaper -> imaging -> dataset -> classifier_io/refcnn
//!                                                               |
//!                                           eval_metrics <------+------> sensitivity
//! ```
//!
//! The [`pipeline`] module wires the stages together over a JSON config and
//! backs the `sleepvis` command-line tool.

pub mod classifier_io;
pub mod dataset;
pub mod error;
pub mod eval_metrics;
pub mod imaging;
pub mod ingest;
pub mod multitaper;
pub mod pipeline;
pub mod refcnn;
pub mod sensitivity;
pub mod stage;

pub(crate) mod rng;

pub use error::{Error, Result};
pub use stage::SleepStage;

/// Length of one scoring epoch in seconds.
pub const EPOCH_SECONDS: f64 = 30.0;
