//! File-based protocol between the pipeline and a classifier backend.
//!
//! A backend is either the built-in network (run in-process) or an external
//! executable honouring
//!
//! ```text
//! <exe> train      --train M1 --val M2 --out DIR
//! <exe> predict    --model DIR --manifest M --out FILE
//! <exe> input-grad --model DIR --manifest M --out FILE [--use-predicted]
//! ```
//!
//! Manifests are JSONL image lists; outputs are [`Tensor`] files (float32
//! `[n, 5]` probabilities, float32 `[n, H, W, 3]` input gradients) whose
//! rows align with manifest lines. A trained model directory always holds
//! `model.meta.json`.

pub mod builtin;
mod invoke;
pub mod tensor;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use builtin::{builtin_input_grad, builtin_predict, builtin_train, BUILTIN_NAME};
pub use invoke::{invoke_input_grad, invoke_predict, invoke_train, validate_gradients, validate_probabilities};
pub use tensor::{DType, Tensor, TensorData};

use crate::stage::SleepStage;

pub const META_FILE: &str = "model.meta.json";

#[derive(Debug, thiserror::Error)]
pub enum IoProtocolError {
    #[error("malformed tensor: {0}")]
    MalformedTensor(String),
    #[error("probability row {row} sums to {sum}")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("backend `{command}` failed ({status}): {stderr}")]
    BackendFailed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("backend `{command}` timed out after {secs} s")]
    Timeout { command: String, secs: u64 },
    #[error("backend lacks the {0} capability")]
    CapabilityMissing(&'static str),
    #[error("missing model artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Meta { path: PathBuf, message: String },
}

impl IoProtocolError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoProtocolError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Builtin,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Capabilities {
    pub train: bool,
    pub predict: bool,
    pub input_grad: bool,
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities {
            train: true,
            predict: true,
            input_grad: true,
        }
    }
}

/// How to reach a backend.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendDescriptor {
    pub mode: BackendMode,
    /// Required in external mode.
    pub executable: Option<PathBuf>,
    pub capabilities: Capabilities,
    /// Appended after the contract flags of every external call.
    pub extra_args: Vec<String>,
    /// Per-call wall-clock limit for external calls.
    pub timeout_s: Option<u64>,
}

impl BackendDescriptor {
    pub fn builtin() -> Self {
        BackendDescriptor::default()
    }

    pub fn external(executable: impl Into<PathBuf>) -> Self {
        BackendDescriptor {
            mode: BackendMode::External,
            executable: Some(executable.into()),
            ..BackendDescriptor::default()
        }
    }

    /// `"builtin"` or a path to an executable.
    pub fn from_flag(flag: &str) -> Self {
        if flag == "builtin" {
            BackendDescriptor::builtin()
        } else {
            BackendDescriptor::external(flag)
        }
    }

    pub fn validate(&self) -> Result<(), IoProtocolError> {
        if self.mode == BackendMode::External && self.executable.is_none() {
            return Err(IoProtocolError::InvalidDescriptor(
                "external mode needs an executable".into(),
            ));
        }
        Ok(())
    }
}

/// `model.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub backend_name: String,
    pub mode: String,
    pub classes: Vec<String>,
    pub created_at: String,
    pub config: serde_json::Value,
}

impl ModelMeta {
    pub fn new(backend_name: &str, mode: &str, config: serde_json::Value) -> Self {
        ModelMeta {
            backend_name: backend_name.to_string(),
            mode: mode.to_string(),
            classes: SleepStage::ALL.iter().map(|s| s.to_string()).collect(),
            created_at: timestamp(),
            config,
        }
    }

    pub fn load(model_dir: &Path) -> Result<Self, IoProtocolError> {
        let path = model_dir.join(META_FILE);
        if !path.is_file() {
            return Err(IoProtocolError::MissingArtifact(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| IoProtocolError::io(&path, e))?;
        let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| IoProtocolError::Meta {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let expected: Vec<String> = SleepStage::ALL.iter().map(|s| s.to_string()).collect();
        if meta.classes != expected {
            return Err(IoProtocolError::Meta {
                path,
                message: format!("classes {:?}, expected {expected:?}", meta.classes),
            });
        }
        Ok(meta)
    }

    pub fn save(&self, model_dir: &Path) -> Result<(), IoProtocolError> {
        let path = model_dir.join(META_FILE);
        let json = serde_json::to_string_pretty(self).expect("meta serializes");
        std::fs::write(&path, json + "\n").map_err(|e| IoProtocolError::io(&path, e))
    }
}

/// RFC 3339 UTC time; honours `SOURCE_DATE_EPOCH` for reproducible artifacts.
fn timestamp() -> String {
    let when = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|s| chrono::DateTime::from_timestamp(s, 0))
        .unwrap_or_else(chrono::Utc::now);
    when.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
