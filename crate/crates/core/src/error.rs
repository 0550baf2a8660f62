use std::path::PathBuf;

use crate::classifier_io::IoProtocolError;
use crate::dataset::DatasetError;
use crate::eval_metrics::MetricsError;
use crate::imaging::ImagingError;
use crate::ingest::IngestError;
use crate::multitaper::MultitaperError;
use crate::refcnn::ModelError;
use crate::sensitivity::SensitivityError;

/// Crate-wide error. Each pipeline stage has its own error enum; this wraps them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Multitaper(#[from] MultitaperError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Protocol(#[from] IoProtocolError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("missing prerequisite artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
