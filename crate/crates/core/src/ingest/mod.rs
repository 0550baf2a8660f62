//! EDF/EDF+ ingestion: container parsing, hypnogram decoding, trimming to
//! sleeping time and 30 s epoch labeling.

pub mod edf;
pub mod hypnogram;
pub mod recording;

pub use edf::{parse_edf, to_physical, write_edf, Calibration, EdfHeader, SignalHeader};
pub use hypnogram::{parse_hypnogram, Annotation, HypnogramSource};
pub use recording::{
    label_epochs, trim_sleeping_time, EpochLabels, LabeledEpoch, Recording, RecordingManifest, TrimBounds,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("truncated file: expected at least {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported EDF variant: {0}")]
    UnsupportedVersion(String),
    #[error("field does not fit: {0}")]
    FieldTooLong(String),
    #[error("digital_min equals digital_max")]
    DegenerateCalibration,
    #[error("unparsable TAL: {0}")]
    UnparsableTal(String),
    #[error("malformed hypnogram CSV at line {line}")]
    MalformedCsv { line: usize },
    #[error("overlapping annotations at {first} s and {second} s")]
    OverlappingAnnotations { first: f64, second: f64 },
    #[error("no scored sleep epoch in the hypnogram")]
    NoScoredSleep,
    #[error("epoch {epoch_index} is not covered by any scoring annotation")]
    GapInAnnotations { epoch_index: usize },
    #[error("no signal matching {0:?}")]
    ChannelNotFound(String),
}

/// A fully ingested night: trimmed recording, its labels and manifest.
#[derive(Debug, Clone)]
pub struct IngestedNight {
    pub recording: Recording,
    pub labels: EpochLabels,
    pub manifest: RecordingManifest,
}

/// Full ingest of one PSG file and its hypnogram.
pub fn ingest_night(
    psg: &[u8],
    hypnogram: HypnogramSource<'_>,
    channel_selector: &str,
    subject_id: &str,
    night: u32,
) -> Result<IngestedNight, IngestError> {
    let (header, channels) = parse_edf(psg)?;
    let (raw, clamped) = Recording::from_edf(&header, &channels, channel_selector, subject_id, night)?;
    let annotations = parse_hypnogram(hypnogram)?;
    let (recording, bounds) = trim_sleeping_time(&raw, &annotations)?;
    let labels = label_epochs(&recording, &annotations)?;
    let manifest = RecordingManifest::new(&recording, bounds, &labels, clamped);
    Ok(IngestedNight {
        recording,
        labels,
        manifest,
    })
}
