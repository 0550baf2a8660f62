//! Spectrogram → RGB image conversion: log scaling into the unit interval,
//! an analytic Jet colourmap, and 8-bit PNG encoding.
//!
//! Image row 0 is the highest frequency, so images read with frequency
//! increasing upward.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::multitaper::Spectrogram;
use crate::stage::SleepStage;

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("degenerate log range: 5th and 98th percentiles are both {0}")]
    DegenerateRange(f64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png encoding: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    UnsupportedPng(String),
    #[error("image buffer has {actual} values, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
}

/// Floor applied to power before taking logarithms.
pub const POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogScaleMode {
    /// `clamp01(ln x + 1)`
    LogPlusOne,
    /// `clamp01((ln x − ln p05) / (ln p98 − ln p05))` with per-recording percentiles.
    #[default]
    Percentile,
}

/// Per-recording power percentiles used by [`LogScaleMode::Percentile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileStats {
    pub p05: f64,
    pub p98: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl PercentileStats {
    /// Percentiles of the given power values (floored like the log input).
    pub fn from_power(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().map(|x| x.max(POWER_FLOOR)).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(PercentileStats {
            p05: percentile_sorted(&v, 5.0),
            p98: percentile_sorted(&v, 98.0),
        })
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Log-scale a spectrogram into the unit interval, same layout as `power`.
pub fn log_scale(
    power: &Spectrogram,
    mode: LogScaleMode,
    stats: Option<&PercentileStats>,
) -> Result<Vec<f64>, ImagingError> {
    match mode {
        LogScaleMode::LogPlusOne => Ok(power
            .power
            .iter()
            .map(|x| clamp01(x.max(POWER_FLOOR).ln() + 1.0))
            .collect()),
        LogScaleMode::Percentile => {
            let stats = match stats {
                Some(s) => *s,
                None => PercentileStats::from_power(power.power.iter().copied())
                    .ok_or(ImagingError::DegenerateRange(0.0))?,
            };
            let lo = stats.p05.max(POWER_FLOOR).ln();
            let hi = stats.p98.max(POWER_FLOOR).ln();
            if !(hi > lo) {
                return Err(ImagingError::DegenerateRange(stats.p05));
            }
            let span = hi - lo;
            Ok(power
                .power
                .iter()
                .map(|x| clamp01((x.max(POWER_FLOOR).ln() - lo) / span))
                .collect())
        }
    }
}

/// Analytic Jet colourmap on [0, 1].
pub fn jet(u: f64) -> [f64; 3] {
    let u = clamp01(u);
    [
        clamp01((4.0 * u - 1.5).min(-4.0 * u + 4.5)),
        clamp01((4.0 * u - 0.5).min(-4.0 * u + 3.5)),
        clamp01((4.0 * u + 0.5).min(-4.0 * u + 2.5)),
    ]
}

/// Quantize a unit-interval channel value to 8 bits.
pub fn quantize(c: f64) -> u8 {
    (255.0 * clamp01(c)).round() as u8
}

/// Where an image came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: String,
    pub night: u32,
    pub epoch_index: usize,
}

/// One rendered epoch: `height × width × 3` unit-interval values, row-major
/// with row 0 at the highest frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub label: Option<SleepStage>,
    pub provenance: Option<Provenance>,
}

impl EpochImage {
    /// Colourize a `[rows × cols]` unit matrix whose row 0 is the lowest
    /// frequency; the output is flipped so the top row is the highest.
    pub fn from_unit_matrix(values: &[f64], rows: usize, cols: usize, cmap: impl Fn(f64) -> [f64; 3]) -> Self {
        assert_eq!(values.len(), rows * cols);
        let mut pixels = Vec::with_capacity(rows * cols * 3);
        for r in 0..rows {
            let src = rows - 1 - r;
            for c in 0..cols {
                pixels.extend_from_slice(&cmap(values[src * cols + c]));
            }
        }
        EpochImage {
            width: cols,
            height: rows,
            pixels,
            label: None,
            provenance: None,
        }
    }

    pub fn quantized(&self) -> Vec<u8> {
        self.pixels.iter().map(|&c| quantize(c)).collect()
    }

    /// Conventional file name `<subject>_<night>_<epoch_index>_<stage>.png`.
    pub fn file_name(&self) -> Option<String> {
        let p = self.provenance.as_ref()?;
        let stage = self.label?;
        Some(format!("{}_{}_{}_{}.png", p.subject, p.night, p.epoch_index, stage))
    }
}

/// Spectrogram → colour image using the given scaling.
pub fn render_spectrogram(
    spec: &Spectrogram,
    mode: LogScaleMode,
    stats: Option<&PercentileStats>,
) -> Result<EpochImage, ImagingError> {
    let unit = log_scale(spec, mode, stats)?;
    Ok(EpochImage::from_unit_matrix(&unit, spec.n_freqs(), spec.n_times(), jet))
}

/// Encode 8-bit RGB bytes (`height × width × 3`) as PNG.
pub fn encode_png_bytes(rgb: &[u8], width: usize, height: usize) -> Result<Vec<u8>, ImagingError> {
    if rgb.len() != width * height * 3 {
        return Err(ImagingError::ShapeMismatch {
            expected: width * height * 3,
            actual: rgb.len(),
        });
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(rgb)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn encode_png(image: &EpochImage, path: &Path) -> Result<(), ImagingError> {
    let bytes = encode_png_bytes(&image.quantized(), image.width, image.height)?;
    let io = |source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&bytes).map_err(io)?;
    w.flush().map_err(io)
}

/// Decoded 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn decode_png_bytes(bytes: &[u8]) -> Result<RgbImage, ImagingError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImagingError::UnsupportedPng("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(ImagingError::UnsupportedPng(format!(
            "{:?} at {:?} bits",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok(RgbImage {
        width: info.width as usize,
        height: info.height as usize,
        data: buf,
    })
}

pub fn decode_png(path: &Path) -> Result<RgbImage, ImagingError> {
    let bytes = std::fs::read(path).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_png_bytes(&bytes)
}
