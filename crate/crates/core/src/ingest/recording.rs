use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::edf::EdfHeader;
use super::hypnogram::Annotation;
use super::IngestError;
use crate::stage::{scoring_label, ScoredLabel, SleepStage};
use crate::EPOCH_SECONDS;

/// Margin kept around the scored sleep period when lights markers are absent.
pub const SLEEP_MARGIN_S: f64 = 900.0;

/// One decoded EEG channel in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub night: u32,
    pub channel: String,
    pub fs: f64,
    /// µV
    pub samples: Vec<f64>,
    /// Position of `samples[0]` in seconds from the start of the source file.
    pub start_epoch_offset: f64,
}

impl Recording {
    /// Pick the first signal whose label contains `selector` and decode it.
    /// Returns the recording plus the number of clamped samples.
    pub fn from_edf(
        header: &EdfHeader,
        channels: &[Vec<i16>],
        selector: &str,
        subject_id: &str,
        night: u32,
    ) -> Result<(Recording, usize), IngestError> {
        let index = header
            .signals
            .iter()
            .position(|s| !s.is_annotation() && s.label.contains(selector))
            .ok_or_else(|| IngestError::ChannelNotFound(selector.to_string()))?;
        let signal = &header.signals[index];
        let fs = header
            .sampling_rate(index)
            .filter(|fs| *fs > 0.0)
            .ok_or_else(|| IngestError::MalformedHeader("data signal with zero record duration".into()))?;
        let (samples, clamped) = signal.calibration().decode(&channels[index])?;
        if clamped > 0 {
            log::warn!("{subject_id} night {night}: {clamped} samples outside the digital range were clamped");
        }
        Ok((
            Recording {
                subject_id: subject_id.to_string(),
                night,
                channel: signal.label.clone(),
                fs,
                samples,
                start_epoch_offset: 0.0,
            },
            clamped,
        ))
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Samples per 30 s epoch.
    pub fn epoch_samples(&self) -> usize {
        (EPOCH_SECONDS * self.fs).round() as usize
    }

    pub fn num_epochs(&self) -> usize {
        self.samples.len() / self.epoch_samples()
    }
}

/// The interval kept by [`trim_sleeping_time`], in file seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimBounds {
    pub start_s: f64,
    pub end_s: f64,
}

fn is_marker(text: &str, which: &str) -> bool {
    let t = text.trim().to_ascii_lowercase();
    t == which || t.replace(' ', "") == which.replace(' ', "")
}

/// Sleeping-time interval from the annotations, before intersecting with the
/// recording: lights off → lights on when both markers exist, otherwise the
/// scored sleep period widened by 15 minutes on each side.
pub fn sleeping_interval(annotations: &[Annotation]) -> Result<TrimBounds, IngestError> {
    let off = annotations.iter().find(|a| is_marker(&a.text, "lights off"));
    let on = annotations.iter().rev().find(|a| is_marker(&a.text, "lights on"));
    if let (Some(off), Some(on)) = (off, on) {
        if on.onset_s > off.onset_s {
            return Ok(TrimBounds {
                start_s: off.onset_s,
                end_s: on.onset_s,
            });
        }
    }
    let mut sleep = annotations.iter().filter(|a| {
        matches!(scoring_label(&a.text), Some(ScoredLabel::Stage(s)) if s.is_sleep())
    });
    let first = sleep.next().ok_or(IngestError::NoScoredSleep)?;
    let last = sleep.last().unwrap_or(first);
    Ok(TrimBounds {
        start_s: first.onset_s - SLEEP_MARGIN_S,
        end_s: last.end_s() + SLEEP_MARGIN_S,
    })
}

/// Restrict a recording to its sleeping time, keeping whole epochs only.
pub fn trim_sleeping_time(
    recording: &Recording,
    annotations: &[Annotation],
) -> Result<(Recording, TrimBounds), IngestError> {
    let wanted = sleeping_interval(annotations)?;
    let rec_start = recording.start_epoch_offset;
    let rec_end = rec_start + recording.duration_s();
    let start_s = wanted.start_s.max(rec_start);
    let end_s = wanted.end_s.min(rec_end);
    let epoch_len = recording.epoch_samples();
    let first = ((start_s - rec_start) * recording.fs).round().max(0.0) as usize;
    let available = ((end_s - start_s) * recording.fs).round().max(0.0) as usize;
    let available = available.min(recording.samples.len().saturating_sub(first));
    let n_epochs = available / epoch_len;
    let kept = n_epochs * epoch_len;
    let trimmed = Recording {
        samples: recording.samples[first..first + kept].to_vec(),
        start_epoch_offset: rec_start + first as f64 / recording.fs,
        ..recording.clone()
    };
    let bounds = TrimBounds {
        start_s: trimmed.start_epoch_offset,
        end_s: trimmed.start_epoch_offset + kept as f64 / recording.fs,
    };
    Ok((trimmed, bounds))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEpoch {
    pub subject_id: String,
    pub night: u32,
    /// 30 s units from the trimmed start.
    pub epoch_index: usize,
    pub stage: SleepStage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLabels {
    pub epochs: Vec<LabeledEpoch>,
    pub excluded: usize,
}

impl EpochLabels {
    pub fn stage_counts(&self) -> BTreeMap<SleepStage, usize> {
        let mut counts: BTreeMap<SleepStage, usize> = SleepStage::ALL.iter().map(|s| (*s, 0)).collect();
        for e in &self.epochs {
            *counts.get_mut(&e.stage).unwrap() += 1;
        }
        counts
    }
}

/// Label every 30 s epoch of a trimmed recording from the scoring annotation
/// covering its midpoint. Excluded epochs (movement, unknown) are dropped.
pub fn label_epochs(recording: &Recording, annotations: &[Annotation]) -> Result<EpochLabels, IngestError> {
    let scoring: Vec<(&Annotation, ScoredLabel)> = annotations
        .iter()
        .filter(|a| a.duration_s > 0.0)
        .filter_map(|a| scoring_label(&a.text).map(|l| (a, l)))
        .collect();
    let mut epochs = Vec::new();
    let mut excluded = 0;
    let mut cursor = 0;
    for k in 0..recording.num_epochs() {
        let mid = recording.start_epoch_offset + (k as f64 + 0.5) * EPOCH_SECONDS;
        // scoring annotations are sorted and disjoint, so a forward scan suffices
        while cursor < scoring.len() && scoring[cursor].0.end_s() <= mid {
            cursor += 1;
        }
        let covering = scoring
            .get(cursor)
            .filter(|(a, _)| a.onset_s <= mid && mid < a.end_s());
        match covering {
            Some((_, ScoredLabel::Stage(stage))) => epochs.push(LabeledEpoch {
                subject_id: recording.subject_id.clone(),
                night: recording.night,
                epoch_index: k,
                stage: *stage,
            }),
            Some((_, ScoredLabel::Excluded)) => excluded += 1,
            None => return Err(IngestError::GapInAnnotations { epoch_index: k }),
        }
    }
    Ok(EpochLabels { epochs, excluded })
}

/// JSON summary of one ingested recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub subject: String,
    pub night: u32,
    pub channel: String,
    pub fs: f64,
    pub trimmed: TrimBounds,
    pub num_epochs: usize,
    pub stage_counts: BTreeMap<SleepStage, usize>,
    pub excluded: usize,
    pub clamped_samples: usize,
}

impl RecordingManifest {
    pub fn new(recording: &Recording, bounds: TrimBounds, labels: &EpochLabels, clamped_samples: usize) -> Self {
        RecordingManifest {
            subject: recording.subject_id.clone(),
            night: recording.night,
            channel: recording.channel.clone(),
            fs: recording.fs,
            trimmed: bounds,
            num_epochs: recording.num_epochs(),
            stage_counts: labels.stage_counts(),
            excluded: labels.excluded,
            clamped_samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_recording(duration_s: f64) -> Recording {
        Recording {
            subject_id: "s1".into(),
            night: 1,
            channel: "EEG Fpz-Cz".into(),
            fs: 100.0,
            samples: vec![0.0; (duration_s * 100.0) as usize],
            start_epoch_offset: 0.0,
        }
    }

    #[test]
    fn lights_markers_define_the_interval() {
        let anns = vec![
            Annotation::new(81000.0, 0.0, "Lights off"),
            Annotation::new(90000.0, 30.0, "Sleep stage 2"),
            Annotation::new(110400.0, 0.0, "Lights on"),
        ];
        let b = sleeping_interval(&anns).unwrap();
        assert_eq!((b.start_s, b.end_s), (81000.0, 110400.0));
    }

    #[test]
    fn fifteen_minute_margin_without_markers() {
        let anns = vec![
            Annotation::new(0.0, 3600.0, "Sleep stage W"),
            Annotation::new(3600.0, 25170.0, "Sleep stage 2"),
            Annotation::new(28770.0, 30.0, "Sleep stage R"),
            Annotation::new(28800.0, 5000.0, "Sleep stage W"),
        ];
        let b = sleeping_interval(&anns).unwrap();
        assert_eq!((b.start_s, b.end_s), (2700.0, 29700.0));
    }

    #[test]
    fn start_is_clamped_to_the_recording() {
        let anns = vec![
            Annotation::new(0.0, 300.0, "Sleep stage W"),
            Annotation::new(300.0, 600.0, "Sleep stage 1"),
            Annotation::new(900.0, 3000.0, "Sleep stage W"),
        ];
        let rec = flat_recording(3900.0);
        let (trimmed, bounds) = trim_sleeping_time(&rec, &anns).unwrap();
        assert_eq!(bounds.start_s, 0.0);
        assert_eq!(bounds.end_s, 1800.0);
        assert_eq!(trimmed.num_epochs(), 60);
    }

    #[test]
    fn wake_only_has_no_scored_sleep() {
        let anns = vec![Annotation::new(0.0, 300.0, "Sleep stage W")];
        assert!(matches!(sleeping_interval(&anns), Err(IngestError::NoScoredSleep)));
    }

    #[test]
    fn partial_trailing_epoch_is_dropped() {
        let mut anns = vec![Annotation::new(0.0, 100.0, "Sleep stage 2")];
        anns.push(Annotation::new(100.0, 1000.0, "Sleep stage W"));
        let rec = flat_recording(95.0);
        let (trimmed, _) = trim_sleeping_time(&rec, &anns).unwrap();
        assert_eq!(trimmed.samples.len(), 9000);
    }

    #[test]
    fn labels_follow_coverage_and_mapping() {
        let rec = flat_recording(360.0);
        let anns = vec![
            Annotation::new(0.0, 90.0, "Sleep stage W"),
            Annotation::new(90.0, 60.0, "Movement time"),
            Annotation::new(150.0, 150.0, "Sleep stage 4"),
            Annotation::new(300.0, 60.0, "Sleep stage ?"),
        ];
        let labels = label_epochs(&rec, &anns).unwrap();
        let got: Vec<(usize, SleepStage)> = labels.epochs.iter().map(|e| (e.epoch_index, e.stage)).collect();
        use SleepStage::*;
        assert_eq!(got, vec![(0, W), (1, W), (2, W), (5, N3), (6, N3), (7, N3), (8, N3), (9, N3)]);
        assert_eq!(labels.excluded, 4);
        assert_eq!(labels.epochs.len() + labels.excluded, rec.num_epochs());
    }

    #[test]
    fn uncovered_epoch_is_a_gap() {
        let rec = flat_recording(90.0);
        let anns = vec![Annotation::new(0.0, 30.0, "Sleep stage W"), Annotation::new(60.0, 30.0, "Sleep stage W")];
        assert!(matches!(
            label_epochs(&rec, &anns),
            Err(IngestError::GapInAnnotations { epoch_index: 1 })
        ));
    }
}
