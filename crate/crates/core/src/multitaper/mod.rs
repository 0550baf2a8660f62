//! Multitaper spectral estimation with DPSS tapers.
//!
//! Hyperparameters follow the usual time-bandwidth parameterization: window
//! `ω` seconds and frequency resolution `f` Hz give the time-half-bandwidth
//! product `W = ω·f/2` and, by default, `L = ⌊2W⌋ − 1` tapers.

mod dpss;
mod psd;
mod spectrogram;

use serde::{Deserialize, Serialize};

pub use dpss::{compute_dpss, concentration, TaperSet};
pub use psd::{multitaper_psd, MultitaperEstimator};
pub use spectrogram::{
    column_centers, epoch_spectrogram, epoch_spectrogram_columns, own_epoch_columns, Spectrogram,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MultitaperError {
    #[error("tridiagonal eigen-solver did not converge at index {index}")]
    EigenFailure { index: usize },
    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(String),
    #[error("segment has {actual} samples, tapers have {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("epoch {epoch_index} out of range (recording has {num_epochs} epochs)")]
    EpochOutOfRange { epoch_index: usize, num_epochs: usize },
    #[error("invalid multitaper config: {0}")]
    InvalidConfig(String),
}

/// Spectrogram hyperparameters. Defaults: 3 s windows, 2 Hz resolution
/// (W = 3, five tapers), 224 × 224 output over a 150 s bin and 0–30 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultitaperConfig {
    pub window_s: f64,
    /// Nominal window step. Columns are laid out as `n_time_cols` uniform
    /// centers over the context bin, so the effective step is
    /// `bin_duration_s / n_time_cols`.
    pub step_s: f64,
    pub freq_res_hz: f64,
    pub half_bandwidth_product: f64,
    pub num_tapers: usize,
    pub fs: f64,
    pub f_max_hz: f64,
    pub n_freq_bins: usize,
    pub n_time_cols: usize,
    /// Context before the epoch start (two epochs).
    pub context_before_s: f64,
    /// Context after the epoch start (the epoch plus two more).
    pub context_after_s: f64,
}

impl Default for MultitaperConfig {
    fn default() -> Self {
        MultitaperConfig::new(3.0, 2.0, 100.0)
    }
}

impl MultitaperConfig {
    /// Derive `W = ω·f/2` and `L = ⌊2W⌋ − 1`; everything else at defaults.
    pub fn new(window_s: f64, freq_res_hz: f64, fs: f64) -> Self {
        let w = window_s * freq_res_hz / 2.0;
        MultitaperConfig {
            window_s,
            step_s: 0.67,
            freq_res_hz,
            half_bandwidth_product: w,
            num_tapers: ((2.0 * w).floor() as usize).saturating_sub(1).max(1),
            fs,
            f_max_hz: 30.0,
            n_freq_bins: 224,
            n_time_cols: 224,
            context_before_s: 60.0,
            context_after_s: 90.0,
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.window_s * self.fs).round() as usize
    }

    pub fn bin_duration_s(&self) -> f64 {
        self.context_before_s + self.context_after_s
    }

    /// Normalized half-bandwidth in cycles per sample, `W / N`.
    pub fn normalized_half_bandwidth(&self) -> f64 {
        self.half_bandwidth_product / self.window_samples() as f64
    }

    /// `n_freq_bins` frequencies uniformly spaced on `[0, f_max_hz]`.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n_freq_bins;
        if n == 1 {
            return vec![0.0];
        }
        (0..n).map(|j| j as f64 * self.f_max_hz / (n - 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<(), MultitaperError> {
        let bad = |m: String| Err(MultitaperError::InvalidConfig(m));
        if !(self.fs > 0.0) {
            return bad(format!("fs = {}", self.fs));
        }
        let w = self.window_s * self.freq_res_hz / 2.0;
        if (self.half_bandwidth_product - w).abs() > 1e-12 * w.abs().max(1.0) {
            return bad(format!(
                "half_bandwidth_product {} != window_s·freq_res_hz/2 = {w}",
                self.half_bandwidth_product
            ));
        }
        if !(self.f_max_hz > 0.0 && self.f_max_hz <= self.fs / 2.0) {
            return bad(format!("f_max_hz {} outside (0, fs/2]", self.f_max_hz));
        }
        if self.num_tapers == 0 || self.window_samples() < self.num_tapers {
            return bad(format!(
                "{} tapers for a {}-sample window",
                self.num_tapers,
                self.window_samples()
            ));
        }
        if self.n_freq_bins == 0 || self.n_time_cols == 0 {
            return bad("empty output grid".into());
        }
        if !(self.bin_duration_s() > 0.0) {
            return bad("non-positive context bin".into());
        }
        let effective_step = self.bin_duration_s() / self.n_time_cols as f64;
        if (effective_step - self.step_s).abs() > 0.01 * self.step_s.abs().max(1e-9) {
            log::warn!(
                "nominal step {} s differs from the effective column step {effective_step:.4} s",
                self.step_s
            );
        }
        Ok(())
    }

    /// Tapers and frequency tables for this configuration.
    pub fn estimator(&self) -> Result<MultitaperEstimator, MultitaperError> {
        self.validate()?;
        let tapers = compute_dpss(self.window_samples(), self.normalized_half_bandwidth(), self.num_tapers)?;
        Ok(MultitaperEstimator::new(tapers, self.frequencies(), self.fs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let cfg = MultitaperConfig::default();
        assert_eq!(cfg.half_bandwidth_product, 3.0);
        assert_eq!(cfg.num_tapers, 5);
        assert_eq!(cfg.window_samples(), 300);
        assert!((cfg.normalized_half_bandwidth() - 0.01).abs() < 1e-15);
        cfg.validate().unwrap();
    }

    #[test]
    fn frequency_axis() {
        let f = MultitaperConfig::default().frequencies();
        assert_eq!(f.len(), 224);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[223], 30.0);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_inconsistent_bandwidth_and_nyquist() {
        let mut cfg = MultitaperConfig::default();
        cfg.half_bandwidth_product = 4.0;
        assert!(cfg.validate().is_err());
        let mut cfg = MultitaperConfig::default();
        cfg.f_max_hz = 60.0;
        assert!(cfg.validate().is_err());
    }
}
