use std::f64::consts::PI;

use super::{MultitaperError, TaperSet};

/// Multitaper power estimator evaluated by direct transform at a fixed list
/// of frequencies. The cosine/sine tables are built once per estimator.
#[derive(Debug, Clone)]
pub struct MultitaperEstimator {
    tapers: TaperSet,
    freqs_hz: Vec<f64>,
    fs: f64,
    /// `cos_table[t * nf + j] = cos(2π f_j t / fs)`
    cos_table: Vec<f64>,
    sin_table: Vec<f64>,
}

impl MultitaperEstimator {
    pub fn new(tapers: TaperSet, freqs_hz: Vec<f64>, fs: f64) -> Self {
        let n = tapers.window_len();
        let nf = freqs_hz.len();
        let mut cos_table = vec![0.0; n * nf];
        let mut sin_table = vec![0.0; n * nf];
        for t in 0..n {
            for (j, f) in freqs_hz.iter().enumerate() {
                let (s, c) = (2.0 * PI * f * t as f64 / fs).sin_cos();
                cos_table[t * nf + j] = c;
                sin_table[t * nf + j] = s;
            }
        }
        MultitaperEstimator {
            tapers,
            freqs_hz,
            fs,
            cos_table,
            sin_table,
        }
    }

    pub fn tapers(&self) -> &TaperSet {
        &self.tapers
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn window_len(&self) -> usize {
        self.tapers.window_len()
    }

    /// `S(f) = (1/(L·fs)) Σ_k |Σ_t v_k[t] x[t] e^{−i2πft/fs}|²`, written into `out`.
    pub fn estimate_into(&self, segment: &[f64], out: &mut [f64]) -> Result<(), MultitaperError> {
        let n = self.window_len();
        let nf = self.freqs_hz.len();
        if segment.len() != n {
            return Err(MultitaperError::LengthMismatch {
                expected: n,
                actual: segment.len(),
            });
        }
        assert_eq!(out.len(), nf, "output column has the wrong length");
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut re = vec![0.0; nf];
        let mut im = vec![0.0; nf];
        for taper in &self.tapers.tapers {
            re.iter_mut().for_each(|v| *v = 0.0);
            im.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..n {
                let y = taper[t] * segment[t];
                if y == 0.0 {
                    continue;
                }
                let c = &self.cos_table[t * nf..(t + 1) * nf];
                let s = &self.sin_table[t * nf..(t + 1) * nf];
                for j in 0..nf {
                    re[j] += y * c[j];
                    im[j] -= y * s[j];
                }
            }
            for j in 0..nf {
                out[j] += re[j] * re[j] + im[j] * im[j];
            }
        }
        let scale = 1.0 / (self.tapers.len() as f64 * self.fs);
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(())
    }

    pub fn estimate(&self, segment: &[f64]) -> Result<Vec<f64>, MultitaperError> {
        let mut out = vec![0.0; self.freqs_hz.len()];
        self.estimate_into(segment, &mut out)?;
        Ok(out)
    }
}

/// Uniformly weighted multitaper power of one segment at `freqs_hz`.
pub fn multitaper_psd(
    segment: &[f64],
    tapers: &TaperSet,
    freqs_hz: &[f64],
    fs: f64,
) -> Result<Vec<f64>, MultitaperError> {
    if segment.len() != tapers.window_len() {
        return Err(MultitaperError::LengthMismatch {
            expected: tapers.window_len(),
            actual: segment.len(),
        });
    }
    MultitaperEstimator::new(tapers.clone(), freqs_hz.to_vec(), fs).estimate(segment)
}
