//! EDF / EDF+ container: fixed-offset ASCII header followed by data records of
//! 16-bit little-endian two's-complement samples.
//!
//! Format reference: <https://www.edfplus.info/specs/edf.html>

use super::IngestError;

/// Size of the fixed part of the header and of each per-signal header block.
pub const HEADER_BLOCK: usize = 256;

/// Label that marks an EDF+ annotation signal.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    pub fn calibration(&self) -> Calibration {
        Calibration {
            digital_min: self.digital_min,
            digital_max: self.digital_max,
            physical_min: self.physical_min,
            physical_max: self.physical_max,
        }
    }

    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }
}

/// Decoded EDF header. Text fields are stored without their space padding.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    /// dd.mm.yy
    pub start_date: String,
    /// hh.mm.ss
    pub start_time: String,
    pub header_bytes: usize,
    /// "EDF+C" for continuous EDF+, empty for plain EDF.
    pub reserved: String,
    pub num_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn num_signals(&self) -> usize {
        self.signals.len()
    }

    /// Bytes per data record.
    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| 2 * s.samples_per_record).sum()
    }

    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }

    /// Sampling rate of signal `index`, if the record duration is positive.
    pub fn sampling_rate(&self, index: usize) -> Option<f64> {
        let s = self.signals.get(index)?;
        (self.record_duration_s > 0.0).then(|| s.samples_per_record as f64 / self.record_duration_s)
    }
}

/// Linear map between digital and physical values of one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub digital_min: i32,
    pub digital_max: i32,
    pub physical_min: f64,
    pub physical_max: f64,
}

impl Calibration {
    fn check(&self) -> Result<(), IngestError> {
        if self.digital_min == self.digital_max {
            return Err(IngestError::DegenerateCalibration);
        }
        Ok(())
    }

    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max as f64 - self.digital_min as f64)
    }

    /// Physical value of `digital`, clamping it into the digital range first.
    /// The flag reports whether clamping happened.
    pub fn to_physical_clamped(&self, digital: i32) -> Result<(f64, bool), IngestError> {
        self.check()?;
        let (lo, hi) = (self.digital_min.min(self.digital_max), self.digital_min.max(self.digital_max));
        let d = digital.clamp(lo, hi);
        let phys = (d as f64 - self.digital_min as f64) * self.gain() + self.physical_min;
        Ok((phys, d != digital))
    }

    /// Nearest digital code for a physical value, clamped into range.
    pub fn to_digital(&self, physical: f64) -> Result<i32, IngestError> {
        self.check()?;
        let d = ((physical - self.physical_min) / self.gain() + self.digital_min as f64).round();
        let (lo, hi) = (self.digital_min.min(self.digital_max), self.digital_min.max(self.digital_max));
        Ok((d as i64).clamp(lo as i64, hi as i64) as i32)
    }

    /// Decode a whole channel. Returns the physical samples and how many
    /// digital values fell outside the calibrated range.
    pub fn decode(&self, digital: &[i16]) -> Result<(Vec<f64>, usize), IngestError> {
        self.check()?;
        let mut clamped = 0;
        let samples = digital
            .iter()
            .map(|&d| {
                let (p, c) = self.to_physical_clamped(d as i32)?;
                clamped += c as usize;
                Ok(p)
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        Ok((samples, clamped))
    }
}

/// `phys = (digital − digital_min)·(physical_max − physical_min)/(digital_max − digital_min) + physical_min`,
/// with out-of-range digital values clamped.
pub fn to_physical(digital: i32, cal: &Calibration) -> Result<f64, IngestError> {
    cal.to_physical_clamped(digital).map(|(p, _)| p)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, width: usize, name: &'static str) -> Result<String, IngestError> {
        let raw = &self.bytes[self.pos..self.pos + width];
        self.pos += width;
        if !raw.is_ascii() {
            return Err(IngestError::MalformedHeader(format!("{name}: non-ASCII bytes")));
        }
        // is_ascii guarantees valid UTF-8
        Ok(std::str::from_utf8(raw).unwrap().trim_end().to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, name: &'static str) -> Result<T, IngestError> {
        let text = self.field(width, name)?;
        text.trim()
            .parse()
            .map_err(|_| IngestError::MalformedHeader(format!("{name}: {text:?} is not numeric")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<EdfHeader, IngestError> {
    if bytes.len() < HEADER_BLOCK {
        return Err(IngestError::TruncatedFile {
            expected: HEADER_BLOCK,
            actual: bytes.len(),
        });
    }
    let mut c = Cursor { bytes, pos: 0 };
    let version = c.field(8, "version")?;
    if version != "0" {
        return Err(IngestError::UnsupportedVersion(version));
    }
    let patient_id = c.field(80, "patient_id")?;
    let recording_id = c.field(80, "recording_id")?;
    let start_date = c.field(8, "start_date")?;
    let start_time = c.field(8, "start_time")?;
    let header_bytes: usize = c.number(8, "header_bytes")?;
    let reserved = c.field(44, "reserved")?;
    if reserved.starts_with("EDF+D") {
        return Err(IngestError::UnsupportedVersion("EDF+D (discontinuous)".into()));
    }
    let num_records: i64 = c.number(8, "num_records")?;
    if num_records < 0 {
        return Err(IngestError::UnsupportedVersion(format!(
            "num_records = {num_records} (streaming files are not supported)"
        )));
    }
    let record_duration_s: f64 = c.number(8, "record_duration")?;
    if !(record_duration_s >= 0.0) {
        return Err(IngestError::MalformedHeader(format!(
            "record_duration: {record_duration_s} is negative"
        )));
    }
    let ns: usize = c.number(4, "num_signals")?;
    if header_bytes != HEADER_BLOCK * (1 + ns) {
        return Err(IngestError::MalformedHeader(format!(
            "header_bytes = {header_bytes} but {ns} signals require {}",
            HEADER_BLOCK * (1 + ns)
        )));
    }
    if bytes.len() < header_bytes {
        return Err(IngestError::TruncatedFile {
            expected: header_bytes,
            actual: bytes.len(),
        });
    }

    let mut columns = |width: usize, name: &'static str| -> Result<Vec<String>, IngestError> {
        (0..ns).map(|_| c.field(width, name)).collect()
    };
    let labels = columns(16, "label")?;
    let transducers = columns(80, "transducer")?;
    let dims = columns(8, "physical_dimension")?;
    let pmins = columns(8, "physical_min")?;
    let pmaxs = columns(8, "physical_max")?;
    let dmins = columns(8, "digital_min")?;
    let dmaxs = columns(8, "digital_max")?;
    let prefilters = columns(80, "prefiltering")?;
    let nsamps = columns(8, "samples_per_record")?;
    let reserveds = columns(32, "signal_reserved")?;

    fn num<T: std::str::FromStr>(text: &str, name: &str) -> Result<T, IngestError> {
        text.trim()
            .parse()
            .map_err(|_| IngestError::MalformedHeader(format!("{name}: {text:?} is not numeric")))
    }

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let s = SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: num(&pmins[i], "physical_min")?,
            physical_max: num(&pmaxs[i], "physical_max")?,
            digital_min: num(&dmins[i], "digital_min")?,
            digital_max: num(&dmaxs[i], "digital_max")?,
            prefiltering: prefilters[i].clone(),
            samples_per_record: num(&nsamps[i], "samples_per_record")?,
            reserved: reserveds[i].clone(),
        };
        if s.digital_min >= s.digital_max {
            return Err(IngestError::MalformedHeader(format!(
                "signal {:?}: digital_min {} >= digital_max {}",
                s.label, s.digital_min, s.digital_max
            )));
        }
        if s.physical_min == s.physical_max {
            return Err(IngestError::MalformedHeader(format!(
                "signal {:?}: physical_min equals physical_max",
                s.label
            )));
        }
        signals.push(s);
    }

    Ok(EdfHeader {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        header_bytes,
        reserved,
        num_records: num_records as usize,
        record_duration_s,
        signals,
    })
}

/// Parse an EDF/EDF+ byte stream into its header and per-signal digital
/// samples (all data records concatenated).
pub fn parse_edf(bytes: &[u8]) -> Result<(EdfHeader, Vec<Vec<i16>>), IngestError> {
    let header = parse_header(bytes)?;
    let record_bytes = header.record_bytes();
    let expected = header.header_bytes + header.num_records * record_bytes;
    if bytes.len() < expected {
        return Err(IngestError::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        log::warn!("{} trailing bytes after the last data record ignored", bytes.len() - expected);
    }

    let mut channels: Vec<Vec<i16>> = header
        .signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * header.num_records))
        .collect();
    let data = &bytes[header.header_bytes..expected];
    for record in data.chunks_exact(record_bytes.max(1)).take(header.num_records) {
        let mut off = 0;
        for (sig, chan) in header.signals.iter().zip(channels.iter_mut()) {
            let n = sig.samples_per_record;
            chan.extend(
                record[off..off + 2 * n]
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]])),
            );
            off += 2 * n;
        }
    }
    Ok((header, channels))
}

/// Shortest decimal rendering of `v` that fits in `width` characters.
fn format_decimal(v: f64, width: usize) -> Result<String, IngestError> {
    if !v.is_finite() {
        return Err(IngestError::FieldTooLong(format!("{v} is not finite")));
    }
    let shortest = format!("{v}");
    if shortest.len() <= width {
        return Ok(shortest);
    }
    for prec in (0..width).rev() {
        let mut s = format!("{v:.prec$}");
        if s.contains('.') {
            s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        if s.len() <= width {
            return Ok(s);
        }
    }
    Err(IngestError::FieldTooLong(format!("{v} does not fit in {width} characters")))
}

fn put(out: &mut Vec<u8>, text: &str, width: usize, name: &str) -> Result<(), IngestError> {
    if !text.is_ascii() || text.len() > width {
        return Err(IngestError::FieldTooLong(format!("{name}: {text:?} exceeds {width} ASCII characters")));
    }
    out.extend_from_slice(text.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - text.len()));
    Ok(())
}

/// Serialize a header and per-signal digital samples as an EDF byte stream.
///
/// `header.header_bytes` and `header.num_records` must agree with the signal
/// count and channel lengths; the writer does not silently fix them.
pub fn write_edf(header: &EdfHeader, channels: &[Vec<i16>]) -> Result<Vec<u8>, IngestError> {
    let ns = header.signals.len();
    if header.header_bytes != HEADER_BLOCK * (1 + ns) {
        return Err(IngestError::MalformedHeader(format!(
            "header_bytes = {} but {ns} signals require {}",
            header.header_bytes,
            HEADER_BLOCK * (1 + ns)
        )));
    }
    if channels.len() != ns {
        return Err(IngestError::MalformedHeader(format!(
            "{} channels given for {ns} signals",
            channels.len()
        )));
    }
    for (s, ch) in header.signals.iter().zip(channels) {
        if ch.len() != s.samples_per_record * header.num_records {
            return Err(IngestError::MalformedHeader(format!(
                "signal {:?}: {} samples, expected {}",
                s.label,
                ch.len(),
                s.samples_per_record * header.num_records
            )));
        }
    }

    let mut out = Vec::with_capacity(header.header_bytes + header.num_records * header.record_bytes());
    put(&mut out, &header.version, 8, "version")?;
    put(&mut out, &header.patient_id, 80, "patient_id")?;
    put(&mut out, &header.recording_id, 80, "recording_id")?;
    put(&mut out, &header.start_date, 8, "start_date")?;
    put(&mut out, &header.start_time, 8, "start_time")?;
    put(&mut out, &header.header_bytes.to_string(), 8, "header_bytes")?;
    put(&mut out, &header.reserved, 44, "reserved")?;
    put(&mut out, &header.num_records.to_string(), 8, "num_records")?;
    put(&mut out, &format_decimal(header.record_duration_s, 8)?, 8, "record_duration")?;
    put(&mut out, &ns.to_string(), 4, "num_signals")?;

    let sigs = &header.signals;
    for s in sigs {
        put(&mut out, &s.label, 16, "label")?;
    }
    for s in sigs {
        put(&mut out, &s.transducer, 80, "transducer")?;
    }
    for s in sigs {
        put(&mut out, &s.physical_dimension, 8, "physical_dimension")?;
    }
    for s in sigs {
        put(&mut out, &format_decimal(s.physical_min, 8)?, 8, "physical_min")?;
    }
    for s in sigs {
        put(&mut out, &format_decimal(s.physical_max, 8)?, 8, "physical_max")?;
    }
    for s in sigs {
        put(&mut out, &s.digital_min.to_string(), 8, "digital_min")?;
    }
    for s in sigs {
        put(&mut out, &s.digital_max.to_string(), 8, "digital_max")?;
    }
    for s in sigs {
        put(&mut out, &s.prefiltering, 80, "prefiltering")?;
    }
    for s in sigs {
        put(&mut out, &s.samples_per_record.to_string(), 8, "samples_per_record")?;
    }
    for s in sigs {
        put(&mut out, &s.reserved, 32, "signal_reserved")?;
    }
    debug_assert_eq!(out.len(), header.header_bytes);

    for r in 0..header.num_records {
        for (s, ch) in sigs.iter().zip(channels) {
            let n = s.samples_per_record;
            for v in &ch[r * n..(r + 1) * n] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}
