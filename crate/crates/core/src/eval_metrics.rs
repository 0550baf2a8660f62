//! Confusion matrices, class-balanced one-vs-all metrics and bootstrap
//! confidence intervals.
//!
//! Per-class metrics are computed on the class-balanced matrix (each row
//! normalized to sum 1). For class `c`, the one-vs-all split has
//! `TP = row_c[c]`, `FN = 1 − TP`, `FP = Σ_{r≠c} row_r[c]` and
//! `TN = (C − 1) − FP`; the negative row is renormalized by `C − 1` before
//! precision, sensitivity, F1 and accuracy are taken.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::stage::{SleepStage, NUM_STAGES};

const C: usize = NUM_STAGES;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no confusion matrices to aggregate")]
    EmptyList,
    #[error("row {0} of the confusion matrix is all zero")]
    ZeroRow(SleepStage),
    #[error("bootstrap needs at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("bootstrap needs at least one iteration")]
    NoIterations,
    #[error("bootstrap resamples kept missing a class")]
    DegenerateResample,
}

/// Rows are true stages, columns predicted, both in W, N1, N2, N3, R order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; C]; C],
    pub model_tag: String,
    pub subject: Option<String>,
}

impl ConfusionMatrix {
    pub fn zeros(model_tag: impl Into<String>, subject: Option<String>) -> Self {
        ConfusionMatrix {
            counts: [[0; C]; C],
            model_tag: model_tag.into(),
            subject,
        }
    }

    pub fn from_counts(counts: [[u64; C]; C]) -> Self {
        ConfusionMatrix {
            counts,
            model_tag: String::new(),
            subject: None,
        }
    }

    pub fn add(&mut self, truth: SleepStage, predicted: SleepStage) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; C] {
        let mut s = [0; C];
        for (r, row) in self.counts.iter().enumerate() {
            s[r] = row.iter().sum();
        }
        s
    }
}

/// Elementwise sum. The result keeps the first matrix's model tag and has
/// no subject unless all inputs share one.
pub fn aggregate(matrices: &[ConfusionMatrix]) -> Result<ConfusionMatrix, MetricsError> {
    let first = matrices.first().ok_or(MetricsError::EmptyList)?;
    let mut out = ConfusionMatrix::zeros(first.model_tag.clone(), first.subject.clone());
    for m in matrices {
        if out.subject != m.subject {
            out.subject = None;
        }
        for r in 0..C {
            for c in 0..C {
                out.counts[r][c] += m.counts[r][c];
            }
        }
    }
    Ok(out)
}

fn class_balanced(m: &ConfusionMatrix) -> Result<[[f64; C]; C], MetricsError> {
    let mut out = [[0.0; C]; C];
    for (r, row) in m.counts.iter().enumerate() {
        let s: u64 = row.iter().sum();
        if s == 0 {
            return Err(MetricsError::ZeroRow(SleepStage::from_index(r).unwrap()));
        }
        for c in 0..C {
            out[r][c] = row[c] as f64 / s as f64;
        }
    }
    Ok(out)
}

/// Each row as percentages of its sum (unrounded).
pub fn row_normalize(m: &ConfusionMatrix) -> Result<[[f64; C]; C], MetricsError> {
    let mut out = class_balanced(m)?;
    for v in out.iter_mut().flatten() {
        *v *= 100.0;
    }
    Ok(out)
}

/// Precision, sensitivity, F1 and accuracy in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl MetricValues {
    pub fn as_array(&self) -> [f64; 4] {
        [self.precision, self.sensitivity, self.f1, self.accuracy]
    }

    pub fn rounded(&self) -> [i64; 4] {
        self.as_array().map(round_half_up)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Indexed by [`SleepStage::index`].
    pub per_class: [MetricValues; C],
    pub macro_avg: MetricValues,
}

pub fn per_class_metrics(m: &ConfusionMatrix) -> Result<ClassMetrics, MetricsError> {
    let b = class_balanced(m)?;
    let negatives = (C - 1) as f64;
    let mut per_class = [MetricValues::default(); C];
    for (c, out) in per_class.iter_mut().enumerate() {
        let tp = b[c][c];
        let fn_ = 1.0 - tp;
        let fp: f64 = (0..C).filter(|&r| r != c).map(|r| b[r][c]).sum();
        let tn = negatives - fp;
        let (fp, tn) = (fp / negatives, tn / negatives);
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let sensitivity = tp / (tp + fn_);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            0.0
        };
        *out = MetricValues {
            precision: 100.0 * precision,
            sensitivity: 100.0 * sensitivity,
            f1: 100.0 * f1,
            accuracy: 100.0 * (tp + tn) / 2.0,
        };
    }
    Ok(ClassMetrics {
        macro_avg: macro_average(&per_class),
        per_class,
    })
}

/// Unweighted mean over classes of each metric.
pub fn macro_average(per_class: &[MetricValues]) -> MetricValues {
    let n = per_class.len().max(1) as f64;
    let sum = |f: fn(&MetricValues) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    MetricValues {
        precision: sum(|m| m.precision),
        sensitivity: sum(|m| m.sensitivity),
        f1: sum(|m| m.f1),
        accuracy: sum(|m| m.accuracy),
    }
}

/// Mean per-class recall, as a fraction.
pub fn balanced_accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let b = class_balanced(m)?;
    Ok((0..C).map(|c| b[c][c]).sum::<f64>() / C as f64)
}

/// Display rounding: halves go up.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiTriple {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub iterations: usize,
    /// 1-based positions in the sorted resample values.
    pub positions: [usize; 3],
    pub precision: CiTriple,
    pub sensitivity: CiTriple,
    pub f1: CiTriple,
    pub accuracy: CiTriple,
}

/// 1-based sorted positions reported for `iterations` resamples:
/// 26, 500 and 975 for 1000, and `⌈B·q⌉` for q = 0.026, 0.5, 0.975 otherwise.
pub fn bootstrap_positions(iterations: usize) -> [usize; 3] {
    [0.026, 0.5, 0.975].map(|q| (((iterations as f64) * q - 1e-9).ceil() as usize).clamp(1, iterations.max(1)))
}

/// Tries per iteration when a resample lacks a class entirely.
const MAX_REDRAWS: usize = 1000;

/// Subject-level bootstrap: each iteration draws `n` of the `n` per-subject
/// matrices with replacement (from its own substream of `seed`), aggregates
/// them and takes macro metrics. A draw whose aggregate has an empty row is
/// redrawn from the same substream.
pub fn bootstrap_ci(matrices: &[ConfusionMatrix], iterations: usize, seed: u64) -> Result<BootstrapCi, MetricsError> {
    let n = matrices.len();
    if n < 2 {
        return Err(MetricsError::TooFewSubjects(n));
    }
    if iterations == 0 {
        return Err(MetricsError::NoIterations);
    }
    aggregate(matrices)?;
    let values: Vec<MetricValues> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = substream(seed, it as u64);
            for _ in 0..MAX_REDRAWS {
                let mut agg = [[0u64; C]; C];
                for _ in 0..n {
                    let m = &matrices[rng.random_range(0..n)];
                    for r in 0..C {
                        for c in 0..C {
                            agg[r][c] += m.counts[r][c];
                        }
                    }
                }
                if let Ok(cm) = per_class_metrics(&ConfusionMatrix::from_counts(agg)) {
                    return Ok(cm.macro_avg);
                }
            }
            Err(MetricsError::DegenerateResample)
        })
        .collect::<Result<_, _>>()?;
    let positions = bootstrap_positions(iterations);
    let triple = |f: fn(&MetricValues) -> f64| {
        let mut v: Vec<f64> = values.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        CiTriple {
            low: v[positions[0] - 1],
            mid: v[positions[1] - 1],
            high: v[positions[2] - 1],
        }
    };
    Ok(BootstrapCi {
        iterations,
        positions,
        precision: triple(|m| m.precision),
        sensitivity: triple(|m| m.sensitivity),
        f1: triple(|m| m.f1),
        accuracy: triple(|m| m.accuracy),
    })
}

/// Everything the evaluation reports for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_tag: String,
    pub n_subjects: usize,
    pub raw: ConfusionMatrix,
    pub normalized: [[f64; C]; C],
    pub metrics: ClassMetrics,
    pub balanced_accuracy: f64,
    pub ci: Option<BootstrapCi>,
}

impl EvalReport {
    /// Aggregate per-subject matrices; the bootstrap runs when there are at
    /// least two subjects and `iterations > 0`.
    pub fn build(
        model_tag: &str,
        per_subject: &[ConfusionMatrix],
        iterations: usize,
        seed: u64,
    ) -> Result<Self, MetricsError> {
        let mut raw = aggregate(per_subject)?;
        raw.model_tag = model_tag.to_string();
        let ci = if per_subject.len() >= 2 && iterations > 0 {
            Some(bootstrap_ci(per_subject, iterations, seed)?)
        } else {
            None
        };
        Ok(EvalReport {
            model_tag: model_tag.to_string(),
            n_subjects: per_subject.len(),
            normalized: row_normalize(&raw)?,
            metrics: per_class_metrics(&raw)?,
            balanced_accuracy: balanced_accuracy(&raw)?,
            raw,
            ci,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let names: Vec<&str> = SleepStage::ALL.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(s, "{} ({} subjects)", self.model_tag, self.n_subjects);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<4} | {:>6} {:>6} {:>6} {:>6} {:>6} | {:>4} {:>4} {:>4} {:>4} {:>4} | {:>4} {:>4} {:>4} {:>4}",
            "", "W", "N1", "N2", "N3", "R", "W", "N1", "N2", "N3", "R", "Pr", "Se", "F1", "Acc"
        );
        let _ = writeln!(s, "{}", "-".repeat(94));
        for (r, name) in names.iter().enumerate() {
            let _ = write!(s, "{name:<4} |");
            for c in 0..C {
                let _ = write!(s, " {:>6}", self.raw.counts[r][c]);
            }
            let _ = write!(s, " |");
            for c in 0..C {
                let _ = write!(s, " {:>4}", round_half_up(self.normalized[r][c]));
            }
            let _ = write!(s, " |");
            for v in self.metrics.per_class[r].rounded() {
                let _ = write!(s, " {v:>4}");
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s);
        let m = self.metrics.macro_avg.rounded();
        let _ = writeln!(
            s,
            "mean      precision {:>3}  sensitivity {:>3}  f1 {:>3}  accuracy {:>3}",
            m[0], m[1], m[2], m[3]
        );
        if let Some(ci) = &self.ci {
            let t = |c: &CiTriple| {
                format!(
                    "{}-{}-{}",
                    round_half_up(c.low),
                    round_half_up(c.mid),
                    round_half_up(c.high)
                )
            };
            let _ = writeln!(
                s,
                "bootstrap precision {}  sensitivity {}  f1 {}  accuracy {}  ({} resamples, positions {:?})",
                t(&ci.precision),
                t(&ci.sensitivity),
                t(&ci.f1),
                t(&ci.accuracy),
                ci.iterations,
                ci.positions
            );
        }
        let _ = writeln!(s, "balanced accuracy {:.4}", self.balanced_accuracy);
        s
    }
}
