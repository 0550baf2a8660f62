use std::ops::Range;

use super::{MultitaperConfig, MultitaperError, MultitaperEstimator};
use crate::ingest::Recording;
use crate::EPOCH_SECONDS;

/// Time × frequency power matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major `[n_freqs × n_times]`, row `j` at `freqs_hz[j]`. µV²/Hz.
    pub power: Vec<f64>,
    /// Column centers in seconds from the start of the (trimmed) recording.
    pub time_centers_s: Vec<f64>,
    pub freqs_hz: Vec<f64>,
}

impl Spectrogram {
    pub fn n_freqs(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn n_times(&self) -> usize {
        self.time_centers_s.len()
    }

    pub fn at(&self, freq: usize, time: usize) -> f64 {
        self.power[freq * self.n_times() + time]
    }
}

/// Reflect an out-of-range index back into `0..len` (edge sample not repeated).
fn reflect(mut i: i64, len: usize) -> usize {
    let len = len as i64;
    if len == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len {
            i = 2 * (len - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Copy the `n` samples starting at `start` (possibly negative or past the
/// end) into `buf`, reflecting at the recording boundaries.
fn window_samples(samples: &[f64], start: i64, buf: &mut [f64]) {
    let len = samples.len();
    if start >= 0 && start as usize + buf.len() <= len {
        buf.copy_from_slice(&samples[start as usize..start as usize + buf.len()]);
        return;
    }
    for (k, b) in buf.iter_mut().enumerate() {
        *b = samples[reflect(start + k as i64, len)];
    }
}

/// Center times of the `n_time_cols` windows of the context bin around `epoch_index`.
pub fn column_centers(cfg: &MultitaperConfig, epoch_index: usize) -> Vec<f64> {
    let bin_start = epoch_index as f64 * EPOCH_SECONDS - cfg.context_before_s;
    let dt = cfg.bin_duration_s() / cfg.n_time_cols as f64;
    (0..cfg.n_time_cols)
        .map(|i| bin_start + (i as f64 + 0.5) * dt)
        .collect()
}

/// Columns whose centers fall inside the epoch itself (not its context).
pub fn own_epoch_columns(cfg: &MultitaperConfig) -> Range<usize> {
    let centers = column_centers(cfg, 0);
    let first = centers.iter().position(|c| *c >= 0.0).unwrap_or(centers.len());
    let last = centers.iter().position(|c| *c >= EPOCH_SECONDS).unwrap_or(centers.len());
    first..last
}

/// Multitaper spectrogram of the context bin around one epoch, restricted to
/// the given columns (the returned matrix has `columns.len()` time columns).
pub fn epoch_spectrogram_columns(
    recording: &Recording,
    epoch_index: usize,
    cfg: &MultitaperConfig,
    estimator: &MultitaperEstimator,
    columns: Range<usize>,
) -> Result<Spectrogram, MultitaperError> {
    let n_epochs = recording.num_epochs();
    if epoch_index >= n_epochs {
        return Err(MultitaperError::EpochOutOfRange {
            epoch_index,
            num_epochs: n_epochs,
        });
    }
    let n = estimator.window_len();
    let nf = estimator.freqs_hz().len();
    let centers: Vec<f64> = column_centers(cfg, epoch_index)[columns].to_vec();
    let nt = centers.len();
    let mut power = vec![0.0; nf * nt];
    let mut buf = vec![0.0; n];
    let mut col = vec![0.0; nf];
    for (i, c) in centers.iter().enumerate() {
        let start = (c * recording.fs - n as f64 / 2.0).round() as i64;
        window_samples(&recording.samples, start, &mut buf);
        estimator.estimate_into(&buf, &mut col)?;
        for j in 0..nf {
            power[j * nt + i] = col[j];
        }
    }
    Ok(Spectrogram {
        power,
        time_centers_s: centers,
        freqs_hz: estimator.freqs_hz().to_vec(),
    })
}

/// The full `n_freq_bins × n_time_cols` spectrogram for one epoch: the epoch
/// plus two epochs of context on either side.
pub fn epoch_spectrogram(
    recording: &Recording,
    epoch_index: usize,
    cfg: &MultitaperConfig,
    estimator: &MultitaperEstimator,
) -> Result<Spectrogram, MultitaperError> {
    epoch_spectrogram_columns(recording, epoch_index, cfg, estimator, 0..cfg.n_time_cols)
}
