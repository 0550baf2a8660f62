//! Hypnogram annotations: EDF+ time-stamped annotation lists (TALs) and a
//! plain CSV fallback.

use super::edf::{EdfHeader, SignalHeader, ANNOTATION_LABEL, HEADER_BLOCK};
use super::IngestError;
use crate::stage::scoring_label;

const TAL_DURATION: u8 = 0x15;
const TAL_SEPARATOR: u8 = 0x14;
const TAL_END: u8 = 0x00;

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset_s: f64,
    /// Zero when the TAL carries no duration.
    pub duration_s: f64,
    pub text: String,
}

impl Annotation {
    pub fn new(onset_s: f64, duration_s: f64, text: impl Into<String>) -> Self {
        Annotation {
            onset_s,
            duration_s,
            text: text.into(),
        }
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }

    pub fn is_scoring(&self) -> bool {
        scoring_label(&self.text).is_some()
    }
}

fn parse_signed(text: &str) -> Option<f64> {
    let t = text.trim();
    if !(t.starts_with('+') || t.starts_with('-')) {
        return None;
    }
    t.parse().ok()
}

/// Parse the raw bytes of one or more annotation data records.
///
/// Time-keeping TALs (no annotation text) are skipped.
pub fn parse_tal(bytes: &[u8]) -> Result<Vec<Annotation>, IngestError> {
    let mut out = Vec::new();
    for tal in bytes.split(|&b| b == TAL_END).filter(|t| !t.is_empty()) {
        let text = std::str::from_utf8(tal)
            .map_err(|_| IngestError::UnparsableTal("annotation is not valid UTF-8".into()))?;
        let mut parts = text.split(TAL_SEPARATOR as char);
        let timing = parts.next().unwrap_or_default();
        let (onset, duration) = match timing.split_once(TAL_DURATION as char) {
            Some((o, d)) => (o, Some(d)),
            None => (timing, None),
        };
        let onset_s = parse_signed(onset).ok_or_else(|| IngestError::UnparsableTal(format!("bad onset {onset:?}")))?;
        let duration_s = match duration {
            Some(d) => d
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0)
                .ok_or_else(|| IngestError::UnparsableTal(format!("bad duration {d:?}")))?,
            None => 0.0,
        };
        // the element after the last separator is empty; so are time-keeping TALs
        for label in parts.filter(|p| !p.is_empty()) {
            out.push(Annotation::new(onset_s, duration_s, label));
        }
    }
    Ok(out)
}

/// Collect the annotations of every `EDF Annotations` signal of a parsed file.
pub fn annotations_from_edf(header: &EdfHeader, channels: &[Vec<i16>]) -> Result<Vec<Annotation>, IngestError> {
    let mut all = Vec::new();
    let mut found = false;
    for (sig, chan) in header.signals.iter().zip(channels) {
        if !sig.is_annotation() {
            continue;
        }
        found = true;
        let n = sig.samples_per_record;
        for record in chan.chunks(n.max(1)) {
            let bytes: Vec<u8> = record.iter().flat_map(|v| v.to_le_bytes()).collect();
            all.extend(parse_tal(&bytes)?);
        }
    }
    if !found {
        return Err(IngestError::UnparsableTal("file has no EDF Annotations signal".into()));
    }
    Ok(all)
}

/// CSV fallback: `onset,duration,label` per line. A leading non-numeric
/// header line is skipped; blank lines are ignored.
pub fn parse_hypnogram_csv(text: &str) -> Result<Vec<Annotation>, IngestError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let (onset, duration, label) = match (fields.next(), fields.next(), fields.next()) {
            (Some(o), Some(d), Some(l)) => (o.trim(), d.trim(), l.trim()),
            _ => return Err(IngestError::MalformedCsv { line: lineno + 1 }),
        };
        match (onset.parse::<f64>(), duration.parse::<f64>()) {
            (Ok(o), Ok(d)) if d >= 0.0 => out.push(Annotation::new(o, d, label)),
            _ if lineno == 0 && out.is_empty() => continue,
            _ => return Err(IngestError::MalformedCsv { line: lineno + 1 }),
        }
    }
    Ok(out)
}

/// Sort chronologically and reject overlapping scoring intervals.
///
/// Only sleep-scoring annotations take part in the overlap check; markers
/// such as lights off/on and other events may sit anywhere.
pub fn normalize_annotations(mut annotations: Vec<Annotation>) -> Result<Vec<Annotation>, IngestError> {
    annotations.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    let mut last: Option<&Annotation> = None;
    for a in annotations.iter().filter(|a| a.is_scoring() && a.duration_s > 0.0) {
        if let Some(prev) = last {
            if a.onset_s < prev.end_s() - 1e-9 {
                return Err(IngestError::OverlappingAnnotations {
                    first: prev.onset_s,
                    second: a.onset_s,
                });
            }
        }
        last = Some(a);
    }
    Ok(annotations)
}

/// Hypnogram input: an EDF+ file with an annotation signal, or CSV text.
pub enum HypnogramSource<'a> {
    Edf(&'a [u8]),
    Csv(&'a str),
}

/// Decode and normalize a hypnogram.
pub fn parse_hypnogram(source: HypnogramSource<'_>) -> Result<Vec<Annotation>, IngestError> {
    let raw = match source {
        HypnogramSource::Edf(bytes) => {
            let (header, channels) = super::edf::parse_edf(bytes)?;
            annotations_from_edf(&header, &channels)?
        }
        HypnogramSource::Csv(text) => parse_hypnogram_csv(text)?,
    };
    normalize_annotations(raw)
}

fn format_seconds(v: f64) -> String {
    format!("{v}")
}

/// Encode annotations as TAL bytes, led by the record's time-keeping TAL.
pub fn encode_tal(record_onset_s: f64, annotations: &[Annotation]) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(b'+');
    out.extend(format_seconds(record_onset_s).bytes());
    out.extend([TAL_SEPARATOR, TAL_SEPARATOR, TAL_END]);
    for a in annotations {
        let sign = if a.onset_s < 0.0 { "" } else { "+" };
        out.extend(format!("{sign}{}", format_seconds(a.onset_s)).bytes());
        if a.duration_s > 0.0 {
            out.push(TAL_DURATION);
            out.extend(format_seconds(a.duration_s).bytes());
        }
        out.push(TAL_SEPARATOR);
        out.extend(a.text.bytes());
        out.extend([TAL_SEPARATOR, TAL_END]);
    }
    out
}

/// Build a single-record EDF+ hypnogram file holding `annotations`.
pub fn annotation_file(
    patient_id: &str,
    start_date: &str,
    start_time: &str,
    annotations: &[Annotation],
) -> Result<(EdfHeader, Vec<Vec<i16>>), IngestError> {
    let mut bytes = encode_tal(0.0, annotations);
    if bytes.len() % 2 == 1 {
        bytes.push(0);
    }
    let samples: Vec<i16> = bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
    let header = EdfHeader {
        version: "0".into(),
        patient_id: patient_id.into(),
        recording_id: format!("Startdate {start_date} X X X"),
        start_date: start_date.into(),
        start_time: start_time.into(),
        header_bytes: 2 * HEADER_BLOCK,
        reserved: "EDF+C".into(),
        num_records: 1,
        record_duration_s: 0.0,
        signals: vec![SignalHeader {
            label: ANNOTATION_LABEL.into(),
            transducer: String::new(),
            physical_dimension: String::new(),
            physical_min: -1.0,
            physical_max: 1.0,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record: samples.len(),
            reserved: String::new(),
        }],
    };
    Ok((header, vec![samples]))
}
