//! Synthetic single-channel sleep EEG with a stage-specific signature per
//! 30 s epoch over a pink-noise background.
//!
//! | stage | signature |
//! |-------|-----------|
//! | W  | 10 Hz alpha bursts |
//! | N1 | continuous 5 Hz theta |
//! | N2 | 13.5 Hz spindles (1 s, every 10 s) plus sub-1.5 Hz K-complex-like transients |
//! | N3 | high-amplitude 1 Hz slow oscillation |
//! | R  | mixed 2–9 Hz band noise |

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ingest::edf::{write_edf, Calibration, EdfHeader, SignalHeader, HEADER_BLOCK};
use crate::ingest::hypnogram::{annotation_file, Annotation};
use crate::ingest::{IngestError, LabeledEpoch, Recording};
use crate::rng::substream;
use crate::stage::SleepStage;
use crate::EPOCH_SECONDS;

/// Background RMS in µV.
const BACKGROUND_RMS: f64 = 10.0;

/// Channel label written into synthetic EDF files.
pub const SYNTH_CHANNEL: &str = "EEG Fpz-Cz";

/// Pink (1/f) noise by Paul Kellet's refined filter over white noise.
struct PinkNoise {
    b: [f64; 7],
}

impl PinkNoise {
    fn new() -> Self {
        PinkNoise { b: [0.0; 7] }
    }

    fn next(&mut self, white: f64) -> f64 {
        let b = &mut self.b;
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out
    }
}

fn hann(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        0.5 - 0.5 * (2.0 * PI * x).cos()
    } else {
        0.0
    }
}

/// Add the stage signature for one epoch into `out` (`t` in seconds from the epoch start).
fn add_signature(stage: SleepStage, out: &mut [f64], fs: f64, rng: &mut ChaCha8Rng) {
    let n = out.len();
    let time = |i: usize| i as f64 / fs;
    match stage {
        SleepStage::W => {
            let mut t0 = 0.0;
            while t0 < EPOCH_SECONDS {
                let len = rng.random_range(2.0..5.0);
                if rng.random_bool(0.7) {
                    let f = rng.random_range(9.5..10.5);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let amp = rng.random_range(20.0..30.0);
                    for (i, v) in out.iter_mut().enumerate() {
                        let t = time(i);
                        if t >= t0 && t < t0 + len {
                            let env = hann((t - t0) / len).sqrt();
                            *v += amp * env * (2.0 * PI * f * t + phase).sin();
                        }
                    }
                }
                t0 += len;
            }
        }
        SleepStage::N1 => {
            let f = rng.random_range(4.5..5.5);
            let phase = rng.random_range(0.0..2.0 * PI);
            let mod_phase = rng.random_range(0.0..2.0 * PI);
            for (i, v) in out.iter_mut().enumerate() {
                let t = time(i);
                let amp = 20.0 * (1.0 + 0.3 * (2.0 * PI * 0.1 * t + mod_phase).sin());
                *v += amp * (2.0 * PI * f * t + phase).sin();
            }
        }
        SleepStage::N2 => {
            for k in 0..3 {
                let start = 10.0 * k as f64 + rng.random_range(1.0..8.0);
                let f = rng.random_range(13.0..14.0);
                let amp = rng.random_range(30.0..40.0);
                for (i, v) in out.iter_mut().enumerate() {
                    let t = time(i);
                    *v += amp * hann(t - start) * (2.0 * PI * f * (t - start)).sin();
                }
            }
            let n_k = rng.random_range(1..=2);
            for _ in 0..n_k {
                let start = rng.random_range(0.0..EPOCH_SECONDS - 1.5);
                let amp = rng.random_range(50.0..70.0);
                for (i, v) in out.iter_mut().enumerate() {
                    let x = (time(i) - start) / 1.5;
                    if (0.0..1.0).contains(&x) {
                        // negative sharp wave followed by a positive component
                        *v -= amp * (2.0 * PI * x).sin() * hann(x);
                    }
                }
            }
        }
        SleepStage::N3 => {
            let f = rng.random_range(0.8..1.2);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(60.0..80.0);
            for (i, v) in out.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * f * time(i) + phase).sin();
            }
        }
        SleepStage::R => {
            let partials: Vec<(f64, f64)> = (0..40)
                .map(|_| (rng.random_range(2.0..9.0), rng.random_range(0.0..2.0 * PI)))
                .collect();
            let amp = 16.0 / (partials.len() as f64 / 2.0).sqrt();
            for (i, v) in out.iter_mut().enumerate().take(n) {
                let t = time(i);
                *v += partials.iter().map(|(f, p)| amp * (2.0 * PI * f * t + p).sin()).sum::<f64>();
            }
        }
    }
}

/// A generated night with its ground-truth labels.
#[derive(Debug, Clone)]
pub struct SyntheticNight {
    pub recording: Recording,
    pub epochs: Vec<LabeledEpoch>,
}

/// Generate one synthetic night, one 30 s epoch per entry of `stages`.
pub fn synth_recording(stages: &[SleepStage], fs: f64, seed: u64) -> SyntheticNight {
    let epoch_len = (EPOCH_SECONDS * fs).round() as usize;
    let mut noise_rng = substream(seed, 0);
    let mut pink = PinkNoise::new();
    // warm up the filter so the first epoch is stationary
    for _ in 0..(10.0 * fs) as usize {
        let w: f64 = StandardNormal.sample(&mut noise_rng);
        pink.next(w);
    }
    let mut samples = Vec::with_capacity(stages.len() * epoch_len);
    for _ in 0..stages.len() * epoch_len {
        let w: f64 = StandardNormal.sample(&mut noise_rng);
        // the Kellet filter has roughly 3x unit gain for unit white noise
        samples.push(pink.next(w) * BACKGROUND_RMS / 3.0);
    }
    for (k, stage) in stages.iter().enumerate() {
        let mut rng = substream(seed, 1 + k as u64);
        add_signature(*stage, &mut samples[k * epoch_len..(k + 1) * epoch_len], fs, &mut rng);
    }
    let subject_id = "synthetic".to_string();
    let epochs = stages
        .iter()
        .enumerate()
        .map(|(k, s)| LabeledEpoch {
            subject_id: subject_id.clone(),
            night: 1,
            epoch_index: k,
            stage: *s,
        })
        .collect();
    SyntheticNight {
        recording: Recording {
            subject_id,
            night: 1,
            channel: SYNTH_CHANNEL.to_string(),
            fs,
            samples,
            start_epoch_offset: 0.0,
        },
        epochs,
    }
}

impl SyntheticNight {
    pub fn with_identity(mut self, subject_id: &str, night: u32) -> Self {
        self.recording.subject_id = subject_id.to_string();
        self.recording.night = night;
        for e in &mut self.epochs {
            e.subject_id = subject_id.to_string();
            e.night = night;
        }
        self
    }
}

/// Stage sequence for a synthetic night: short wake runs at both ends and
/// runs of 3–6 epochs in between, cycling through shuffled stage orders so
/// every stage appears and class counts stay comparable.
pub fn stage_plan(n_epochs: usize, seed: u64) -> Vec<SleepStage> {
    let mut rng = substream(seed, u64::MAX);
    let mut plan = Vec::with_capacity(n_epochs);
    plan.extend(std::iter::repeat_n(SleepStage::W, 2.min(n_epochs)));
    let mut order = SleepStage::ALL.to_vec();
    'outer: loop {
        order.shuffle(&mut rng);
        for stage in &order {
            let len = rng.random_range(3..=6);
            for _ in 0..len {
                if plan.len() + 2 >= n_epochs {
                    break 'outer;
                }
                plan.push(*stage);
            }
        }
    }
    while plan.len() < n_epochs {
        plan.push(SleepStage::W);
    }
    plan
}

fn hypnogram_text(stage: SleepStage) -> &'static str {
    match stage {
        SleepStage::W => "Sleep stage W",
        SleepStage::N1 => "Sleep stage 1",
        SleepStage::N2 => "Sleep stage 2",
        SleepStage::N3 => "Sleep stage 3",
        SleepStage::R => "Sleep stage R",
    }
}

/// Hypnogram annotations for a stage sequence, one annotation per run.
pub fn hypnogram_annotations(stages: &[SleepStage]) -> Vec<Annotation> {
    let mut out: Vec<Annotation> = Vec::new();
    for (k, stage) in stages.iter().enumerate() {
        let text = hypnogram_text(*stage);
        match out.last_mut() {
            Some(last) if last.text == text => last.duration_s += EPOCH_SECONDS,
            _ => out.push(Annotation::new(k as f64 * EPOCH_SECONDS, EPOCH_SECONDS, text)),
        }
    }
    out
}

/// Synthetic night as EDF bytes: `(psg, hypnogram)`. The PSG is plain EDF
/// with one-second records; the hypnogram is a single-record EDF+ file.
pub fn synth_edf_files(night: &SyntheticNight, stages: &[SleepStage]) -> Result<(Vec<u8>, Vec<u8>), IngestError> {
    let rec = &night.recording;
    let spr = rec.fs.round() as usize;
    let cal = Calibration {
        digital_min: -32768,
        digital_max: 32767,
        physical_min: -500.0,
        physical_max: 500.0,
    };
    let digital = rec
        .samples
        .iter()
        .map(|&v| cal.to_digital(v).map(|d| d as i16))
        .collect::<Result<Vec<i16>, _>>()?;
    let num_records = digital.len() / spr;
    let patient = format!("{} X X X", rec.subject_id);
    let header = EdfHeader {
        version: "0".into(),
        patient_id: patient.clone(),
        recording_id: format!("Startdate 01-JAN-2020 night{} X X", rec.night),
        start_date: "01.01.20".into(),
        start_time: "22.00.00".into(),
        header_bytes: 2 * HEADER_BLOCK,
        reserved: String::new(),
        num_records,
        record_duration_s: 1.0,
        signals: vec![SignalHeader {
            label: SYNTH_CHANNEL.into(),
            transducer: "synthetic".into(),
            physical_dimension: "uV".into(),
            physical_min: cal.physical_min,
            physical_max: cal.physical_max,
            digital_min: cal.digital_min,
            digital_max: cal.digital_max,
            prefiltering: String::new(),
            samples_per_record: spr,
            reserved: String::new(),
        }],
    };
    let psg = write_edf(&header, &[digital[..num_records * spr].to_vec()])?;
    let (hyp_header, hyp_channels) =
        annotation_file(&patient, "01.01.20", "22.00.00", &hypnogram_annotations(stages))?;
    let hyp = write_edf(&hyp_header, &hyp_channels)?;
    Ok((psg, hyp))
}
