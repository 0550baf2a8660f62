//! Per-class sensitivity maps: the mean absolute input gradient of the loss,
//! summed over colour channels and min-max normalized, rendered with Jet.

use std::path::Path;

use crate::classifier_io::{IoProtocolError, Tensor};
use crate::dataset::ManifestRecord;
use crate::imaging::{encode_png_bytes, jet, quantize, ImagingError};
use crate::stage::{SleepStage, NUM_STAGES};

#[derive(Debug, thiserror::Error)]
pub enum SensitivityError {
    #[error("no examples of {stage} for subject {subject}")]
    EmptySelection { stage: SleepStage, subject: String },
    #[error("gradient tensor: {0}")]
    BadGradients(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Protocol(#[from] IoProtocolError),
}

/// Which gradient rows enter a map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub stage: SleepStage,
    /// `None` selects every subject.
    pub subject: Option<String>,
}

impl Selection {
    pub fn file_name(&self) -> String {
        format!(
            "sensmap_{}_{}.png",
            self.subject.as_deref().unwrap_or("all"),
            self.stage
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    pub height: usize,
    pub width: usize,
    /// Row-major `[height × width]` in `[0, 1]`.
    pub values: Vec<f64>,
    /// Channel-summed mean absolute gradient before normalization.
    pub raw: Vec<f64>,
    pub selection: Selection,
    pub n_examples: usize,
    /// Set when the raw map is constant; `values` are then all zero.
    pub degenerate: bool,
}

/// Running per-stage sums of channel-summed absolute gradients, fed one
/// gradient tensor at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityAccumulator {
    pub subject: Option<String>,
    height: usize,
    width: usize,
    sums: Vec<Vec<f64>>,
    counts: [usize; NUM_STAGES],
}

impl SensitivityAccumulator {
    /// `subject = None` accumulates every subject.
    pub fn new(subject: Option<String>) -> Self {
        SensitivityAccumulator {
            subject,
            height: 0,
            width: 0,
            sums: vec![Vec::new(); NUM_STAGES],
            counts: [0; NUM_STAGES],
        }
    }

    pub fn count(&self, stage: SleepStage) -> usize {
        self.counts[stage.index()]
    }

    /// Add gradients `[n, h, w, c]` whose rows align with `records`.
    pub fn add(&mut self, grads: &Tensor, records: &[ManifestRecord]) -> Result<(), SensitivityError> {
        let data = grads
            .as_f32()
            .ok_or_else(|| SensitivityError::BadGradients("not float32".into()))?;
        let dims = grads.dims_usize();
        if dims.len() != 4 || dims[0] != records.len() {
            return Err(SensitivityError::BadGradients(format!(
                "dims {dims:?} for {} manifest rows",
                records.len()
            )));
        }
        let (h, w, c) = (dims[1], dims[2], dims[3]);
        if self.height == 0 {
            self.height = h;
            self.width = w;
        } else if (self.height, self.width) != (h, w) {
            return Err(SensitivityError::BadGradients(format!(
                "{h}×{w} gradients after {}×{}",
                self.height, self.width
            )));
        }
        let per = h * w * c;
        for (k, r) in records.iter().enumerate() {
            if self.subject.as_ref().is_some_and(|s| *s != r.subject) {
                continue;
            }
            let slot = r.label.index();
            let sum = &mut self.sums[slot];
            if sum.is_empty() {
                sum.resize(h * w, 0.0);
            }
            for (p, px) in data[k * per..(k + 1) * per].chunks_exact(c).enumerate() {
                sum[p] += px.iter().map(|v| v.abs() as f64).sum::<f64>();
            }
            self.counts[slot] += 1;
        }
        Ok(())
    }

    /// Mean over the examples of `stage`, min-max normalized.
    pub fn finish(&self, stage: SleepStage) -> Result<SensitivityMap, SensitivityError> {
        let selection = Selection {
            stage,
            subject: self.subject.clone(),
        };
        let n = self.counts[stage.index()];
        if n == 0 {
            return Err(SensitivityError::EmptySelection {
                stage,
                subject: self.subject.clone().unwrap_or_else(|| "all".into()),
            });
        }
        let raw: Vec<f64> = self.sums[stage.index()].iter().map(|v| v / n as f64).collect();
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let degenerate = !(hi > lo);
        let values = if degenerate {
            log::warn!("constant sensitivity map for {selection:?}");
            vec![0.0; raw.len()]
        } else {
            raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
        };
        Ok(SensitivityMap {
            height: self.height,
            width: self.width,
            values,
            raw,
            selection,
            n_examples: n,
            degenerate,
        })
    }
}

/// Build the map for `selection` from gradients `[n, h, w, c]` whose rows
/// align with `records`.
pub fn sensitivity_map(
    grads: &Tensor,
    records: &[ManifestRecord],
    selection: &Selection,
) -> Result<SensitivityMap, SensitivityError> {
    let mut acc = SensitivityAccumulator::new(selection.subject.clone());
    acc.add(grads, records)?;
    acc.finish(selection.stage)
}

impl SensitivityMap {
    /// Jet-coloured 8-bit RGB, same orientation as the input images.
    pub fn to_rgb(&self) -> Vec<u8> {
        self.values.iter().flat_map(|&v| jet(v).map(quantize)).collect()
    }

    pub fn save_raw(&self, path: &Path) -> Result<(), SensitivityError> {
        let t = Tensor::f32(
            &[self.height, self.width],
            self.raw.iter().map(|&v| v as f32).collect(),
        )?;
        Ok(t.write(path)?)
    }
}

pub fn render_map(map: &SensitivityMap, path: &Path) -> Result<(), SensitivityError> {
    let bytes = encode_png_bytes(&map.to_rgb(), map.width, map.height)?;
    std::fs::write(path, bytes).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(subject: &str, stage: SleepStage, k: usize) -> ManifestRecord {
        ManifestRecord {
            id: format!("{subject}_{k}"),
            subject: subject.into(),
            night: 1,
            epoch_index: k,
            label: stage,
            image_path: "x.png".into(),
        }
    }

    #[test]
    fn single_pixel_example() {
        let mut g = vec![0.0f32; 2 * 2 * 3];
        g[3..6].copy_from_slice(&[-1.0, 2.0, 0.0]);
        let t = Tensor::f32(&[1, 2, 2, 3], g).unwrap();
        let sel = Selection {
            stage: SleepStage::N2,
            subject: None,
        };
        let m = sensitivity_map(&t, &[rec("a", SleepStage::N2, 0)], &sel).unwrap();
        assert_eq!(m.values, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.raw[1], 3.0);
        let rgb = m.to_rgb();
        assert_eq!(&rgb[3..6], &[128, 0, 0]);
        assert_eq!(&rgb[0..3], &[0, 0, 128]);
    }

    #[test]
    fn constant_field_is_degenerate() {
        let t = Tensor::f32(&[2, 2, 2, 3], vec![0.5; 24]).unwrap();
        let recs = [rec("a", SleepStage::W, 0), rec("a", SleepStage::W, 1)];
        let sel = Selection {
            stage: SleepStage::W,
            subject: Some("a".into()),
        };
        let m = sensitivity_map(&t, &recs, &sel).unwrap();
        assert!(m.degenerate);
        assert!(m.values.iter().all(|v| *v == 0.0));
        assert_eq!(m.n_examples, 2);
        assert_eq!(sel.file_name(), "sensmap_a_W.png");
    }

    #[test]
    fn empty_selection() {
        let t = Tensor::f32(&[1, 1, 1, 3], vec![1.0; 3]).unwrap();
        let sel = Selection {
            stage: SleepStage::R,
            subject: None,
        };
        assert!(matches!(
            sensitivity_map(&t, &[rec("a", SleepStage::W, 0)], &sel),
            Err(SensitivityError::EmptySelection { .. })
        ));
        let sel = Selection {
            stage: SleepStage::W,
            subject: Some("b".into()),
        };
        assert!(sensitivity_map(&t, &[rec("a", SleepStage::W, 0)], &sel).is_err());
    }
}
