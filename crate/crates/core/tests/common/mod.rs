//! Shared fixtures, independent oracles and the acceptance checks. Each
//! check returns a [`Check`]; the acceptance binary prints them and the
//! narrower test files assert on them.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepvis::dataset::{synth_recording, ManifestRecord};
use sleepvis::eval_metrics::{
    balanced_accuracy, bootstrap_ci, per_class_metrics, round_half_up, row_normalize, ConfusionMatrix,
};
use sleepvis::imaging::{render_spectrogram, LogScaleMode, PercentileStats};
use sleepvis::multitaper::{
    compute_dpss, epoch_spectrogram, epoch_spectrogram_columns, multitaper_psd, own_epoch_columns,
    MultitaperConfig, TaperSet,
};
use sleepvis::pipeline::{self, PipelineConfig};
use sleepvis::refcnn::{
    evaluate, loss, loss_and_gradients, AdamConfig, ImageSet, LayerKind, ModelParams, ModelSpec, Shape,
    TrainConfig, Trainer, DESK_ARCH,
};
use sleepvis::stage::SleepStage;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Check {
    fn timed(name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Check {
        let start = Instant::now();
        let (mut pass, mut detail) = f();
        let elapsed = start.elapsed();
        if let Some(b) = budget {
            if elapsed > b {
                pass = false;
                detail = format!("{detail}; over the {:.0} s budget", b.as_secs_f64());
            }
        }
        Check {
            name,
            pass,
            detail,
            elapsed,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} ({:.2} s): {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// ---------------------------------------------------------------------------
// Reference aggregate results (rows = true W N1 N2 N3 R).

pub const FE_COUNTS: [[u64; 5]; 5] = [
    [3529, 579, 97, 46, 258],
    [458, 1219, 353, 29, 703],
    [346, 1215, 13118, 1676, 1222],
    [80, 31, 461, 5003, 16],
    [219, 781, 470, 6, 6235],
];
pub const FE_NORMALIZED: [[i64; 5]; 5] = [
    [78, 13, 2, 1, 6],
    [17, 44, 13, 1, 25],
    [2, 7, 75, 10, 7],
    [1, 1, 8, 89, 0],
    [3, 10, 6, 0, 81],
];
/// precision, sensitivity, F1, accuracy per class
pub const FE_METRICS: [[i64; 4]; 5] = [
    [93, 78, 85, 86],
    [85, 44, 58, 68],
    [91, 75, 82, 84],
    [97, 89, 93, 93],
    [89, 81, 85, 86],
];
pub const FT_COUNTS: [[u64; 5]; 5] = [
    [3505, 671, 52, 39, 242],
    [301, 1553, 334, 19, 555],
    [192, 985, 13884, 1411, 1105],
    [73, 24, 462, 5015, 17],
    [82, 563, 378, 14, 6674],
];
pub const FT_NORMALIZED: [[i64; 5]; 5] = [
    [78, 15, 1, 1, 5],
    [11, 56, 12, 1, 20],
    [1, 6, 79, 8, 6],
    [1, 0, 8, 90, 0],
    [1, 7, 5, 0, 87],
];
pub const FT_METRICS: [[i64; 4]; 5] = [
    [96, 78, 86, 87],
    [89, 56, 69, 75],
    [92, 79, 85, 86],
    [97, 90, 93, 94],
    [92, 87, 89, 89],
];
/// Reference macro means.
pub const FE_MEANS: [i64; 4] = [91, 73, 81, 83];
pub const FT_MEANS: [i64; 4] = [93, 78, 84, 86];

/// Mismatching reference integers as `(what, expected, got)`.
pub fn reference_mismatches(
    counts: [[u64; 5]; 5],
    normalized: [[i64; 5]; 5],
    metrics: [[i64; 4]; 5],
) -> Vec<(String, i64, i64)> {
    let cm = ConfusionMatrix::from_counts(counts);
    let mut bad = Vec::new();
    let norm = row_normalize(&cm).unwrap();
    for (i, s) in SleepStage::ALL.iter().enumerate() {
        for (j, p) in SleepStage::ALL.iter().enumerate() {
            let got = round_half_up(norm[i][j]);
            if got != normalized[i][j] {
                bad.push((format!("normalized {s}->{p}"), normalized[i][j], got));
            }
        }
    }
    let m = per_class_metrics(&cm).unwrap();
    for (i, s) in SleepStage::ALL.iter().enumerate() {
        let got = m.per_class[i].rounded();
        for (k, name) in ["precision", "sensitivity", "f1", "accuracy"].iter().enumerate() {
            if got[k] != metrics[i][k] {
                bad.push((format!("{s} {name}"), metrics[i][k], got[k]));
            }
        }
    }
    bad
}

pub fn check_metric_reproduction() -> Check {
    Check::timed("metric reproduction", secs(1), || {
        let mut bad = reference_mismatches(FE_COUNTS, FE_NORMALIZED, FE_METRICS);
        bad.extend(reference_mismatches(FT_COUNTS, FT_NORMALIZED, FT_METRICS));
        if bad.is_empty() {
            (true, "40 per-class values and 50 normalized cells per model match".into())
        } else {
            (false, format!("{} mismatches: {bad:?}", bad.len()))
        }
    })
}

pub fn macro_means(counts: [[u64; 5]; 5]) -> [i64; 4] {
    let m = per_class_metrics(&ConfusionMatrix::from_counts(counts)).unwrap();
    m.macro_avg.rounded()
}

pub fn check_macro_reproduction() -> Check {
    Check::timed("macro-average reproduction", secs(1), || {
        let ft = macro_means(FT_COUNTS);
        let fe = macro_means(FE_COUNTS);
        let fe_ok = fe.iter().zip(FE_MEANS).all(|(a, b)| (a - b).abs() <= 1);
        (
            ft == FT_MEANS && fe_ok,
            format!("FT {ft:?} (expected {FT_MEANS:?} exactly), FE {fe:?} (expected {FE_MEANS:?} ±1)"),
        )
    })
}

// ---------------------------------------------------------------------------
// Tapers.

/// Dense sinc concentration kernel `A[t,t'] = sin(2πw(t−t'))/(π(t−t'))`.
pub fn sinc_kernel(n: usize, w: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        2.0 * w
                    } else {
                        let d = i as f64 - j as f64;
                        (2.0 * PI * w * d).sin() / (PI * d)
                    }
                })
                .collect()
        })
        .collect()
}

pub struct DpssReport {
    pub max_gram_err: f64,
    pub max_concentration_err: f64,
    pub max_residual: f64,
    pub concentrations: Vec<f64>,
}

pub fn dpss_report(n: usize, w: f64, count: usize) -> DpssReport {
    let set = compute_dpss(n, w, count).unwrap();
    let a = sinc_kernel(n, w);
    let mut max_gram_err = 0.0f64;
    for i in 0..count {
        for j in 0..count {
            let d: f64 = set.tapers[i].iter().zip(&set.tapers[j]).map(|(x, y)| x * y).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            max_gram_err = max_gram_err.max((d - target).abs());
        }
    }
    let mut max_concentration_err = 0.0f64;
    let mut max_residual = 0.0f64;
    for (v, &lambda) in set.tapers.iter().zip(&set.concentrations) {
        let av: Vec<f64> = a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect();
        let q: f64 = av.iter().zip(v).map(|(x, y)| x * y).sum();
        max_concentration_err = max_concentration_err.max((q - lambda).abs());
        for (x, y) in av.iter().zip(v) {
            max_residual = max_residual.max((x - q * y).abs());
        }
    }
    DpssReport {
        max_gram_err,
        max_concentration_err,
        max_residual,
        concentrations: set.concentrations,
    }
}

pub fn check_dpss() -> Check {
    Check::timed("DPSS correctness", secs(5), || {
        let r = dpss_report(300, 3.0 / 300.0, 5);
        let decreasing = r.concentrations.windows(2).all(|p| p[0] > p[1]);
        let pass = r.max_gram_err <= 1e-8
            && decreasing
            && r.concentrations[0] > 0.999
            && r.max_concentration_err <= 1e-10
            && r.max_residual <= 1e-8;
        (
            pass,
            format!(
                "orthonormality err {:.1e}, concentrations {:?}, quadratic-form err {:.1e}, eigen residual {:.1e}",
                r.max_gram_err, r.concentrations, r.max_concentration_err, r.max_residual
            ),
        )
    })
}

// ---------------------------------------------------------------------------
// Spectra.

/// `(1/(L·fs)) Σ_k |Σ_t v_k[t] x[t] e^{−i2πft/fs}|²` with the trigonometric
/// terms computed afresh for every sample.
pub fn naive_multitaper(segment: &[f64], tapers: &[Vec<f64>], freqs: &[f64], fs: f64) -> Vec<f64> {
    freqs
        .iter()
        .map(|&f| {
            let mut total = 0.0;
            for v in tapers {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, (&x, &h)) in segment.iter().zip(v).enumerate() {
                    let phase = 2.0 * PI * f * t as f64 / fs;
                    re += h * x * phase.cos();
                    im -= h * x * phase.sin();
                }
                total += re * re + im * im;
            }
            total / (tapers.len() as f64 * fs)
        })
        .collect()
}

pub struct SpectralReport {
    pub segments: usize,
    pub max_single_taper_err: f64,
    pub max_naive_err: f64,
}

pub fn spectral_report(segments: usize, seed: u64) -> SpectralReport {
    let cfg = MultitaperConfig::default();
    let est = cfg.estimator().unwrap();
    let tapers = est.tapers().clone();
    let freqs = est.freqs_hz().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_single_taper_err = 0.0f64;
    let mut max_naive_err = 0.0f64;
    for _ in 0..segments {
        let seg: Vec<f64> = (0..tapers.window_len()).map(|_| rng.random_range(-50.0..50.0)).collect();
        let psd = multitaper_psd(&seg, &tapers, &freqs, cfg.fs).unwrap();
        let mut mean = vec![0.0; freqs.len()];
        for (v, l) in tapers.tapers.iter().zip(&tapers.concentrations) {
            let single = TaperSet {
                tapers: vec![v.clone()],
                concentrations: vec![*l],
                half_bandwidth: tapers.half_bandwidth,
            };
            let p = multitaper_psd(&seg, &single, &freqs, cfg.fs).unwrap();
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x / tapers.len() as f64;
            }
        }
        let naive = naive_multitaper(&seg, &tapers.tapers, &freqs, cfg.fs);
        for j in 0..freqs.len() {
            max_single_taper_err = max_single_taper_err.max(rel_err(psd[j], mean[j]));
            max_naive_err = max_naive_err.max(rel_err(psd[j], naive[j]));
        }
    }
    SpectralReport {
        segments,
        max_single_taper_err,
        max_naive_err,
    }
}

pub fn check_spectral_oracle() -> Check {
    Check::timed("spectral oracle", secs(30), || {
        let r = spectral_report(100, 2024);
        (
            r.max_single_taper_err <= 1e-9 && r.max_naive_err <= 1e-6,
            format!(
                "{} segments: vs mean of single-taper periodograms {:.1e}, vs naive transform {:.1e} (relative)",
                r.segments, r.max_single_taper_err, r.max_naive_err
            ),
        )
    })
}

// ---------------------------------------------------------------------------
// Network.

/// Scaled-down architecture with every layer kind.
pub fn small_spec() -> ModelSpec {
    ModelSpec::parse("cm4 cm4 fcr8 fcs5", [8, 8, 3], 0.5).unwrap()
}

/// Xavier weights plus small random biases, so bias gradients and ReLU
/// gating are exercised.
pub fn small_params(seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init_xavier(&small_spec(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for l in &mut p.layers {
        for b in &mut l.bias {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    p
}

pub fn random_inputs(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..len).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Straightforward per-layer evaluation of the network in inference mode,
/// written from the layer definitions with plain nested loops.
pub fn naive_forward(params: &ModelParams<f64>, input: &[f64]) -> Vec<f64> {
    let shapes = params.spec.shapes().unwrap();
    let mut x = input.to_vec();
    for (li, l) in params.spec.layers.iter().enumerate() {
        let p = &params.layers[li];
        x = match (l.kind, shapes[li]) {
            (LayerKind::Conv3x3Relu, Shape::Map(c, h, w)) => {
                let co = l.width;
                let mut y = vec![0.0; co * h * w];
                for o in 0..co {
                    for r in 0..h {
                        for s in 0..w {
                            let mut acc = p.bias[o];
                            for i in 0..c {
                                for dr in 0..3 {
                                    for ds in 0..3 {
                                        let (rr, ss) = (r as isize + dr as isize - 1, s as isize + ds as isize - 1);
                                        if rr < 0 || ss < 0 || rr >= h as isize || ss >= w as isize {
                                            continue;
                                        }
                                        let wt = p.weights[((o * c + i) * 3 + dr) * 3 + ds];
                                        acc += wt * x[(i * h + rr as usize) * w + ss as usize];
                                    }
                                }
                            }
                            y[(o * h + r) * w + s] = acc.max(0.0);
                        }
                    }
                }
                y
            }
            (LayerKind::MaxPool2x2, Shape::Map(c, h, w)) => {
                let (ho, wo) = (h / 2, w / 2);
                let mut y = vec![0.0; c * ho * wo];
                for i in 0..c {
                    for r in 0..ho {
                        for s in 0..wo {
                            let mut m = f64::NEG_INFINITY;
                            for dr in 0..2 {
                                for ds in 0..2 {
                                    m = m.max(x[(i * h + 2 * r + dr) * w + 2 * s + ds]);
                                }
                            }
                            y[(i * ho + r) * wo + s] = m;
                        }
                    }
                }
                y
            }
            (LayerKind::FcRelu | LayerKind::FcSoftmax, _) => {
                let n_in = x.len();
                let mut y: Vec<f64> = (0..l.width)
                    .map(|o| p.bias[o] + (0..n_in).map(|i| p.weights[o * n_in + i] * x[i]).sum::<f64>())
                    .collect();
                if l.kind == LayerKind::FcRelu {
                    y.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                y
            }
            (LayerKind::Dropout, _) => x,
            other => panic!("unexpected layer {other:?}"),
        };
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Gradients below this magnitude on both sides are compared absolutely:
/// exact zeros (inactive ReLU paths) meet finite-difference rounding noise.
pub const GRAD_FLOOR: f64 = 1e-8;

pub struct GradReport {
    pub params_checked: usize,
    pub inputs_checked: usize,
    pub max_param_rel: f64,
    pub max_input_rel: f64,
    pub floored: usize,
}

fn grad_error(analytic: f64, numeric: f64, floored: &mut usize) -> f64 {
    if analytic.abs().max(numeric.abs()) < GRAD_FLOOR {
        *floored += 1;
        (analytic - numeric).abs() / GRAD_FLOOR
    } else {
        rel_err(analytic, numeric)
    }
}

pub fn gradient_report(seed: u64) -> GradReport {
    const H: f64 = 1e-5;
    let params = small_params(seed);
    let len = params.spec.input_len();
    let inputs = random_inputs(3, len, seed + 1);
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let labels = [0usize, 3, 4];
    let r = loss_and_gradients(&params, &refs, &labels, false, 0, true).unwrap();
    let mut floored = 0;
    let mut max_param_rel = 0.0f64;
    let mut params_checked = 0;
    for li in 0..params.layers.len() {
        for which in 0..2 {
            let count = if which == 0 {
                params.layers[li].weights.len()
            } else {
                params.layers[li].bias.len()
            };
            for k in 0..count {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    let slot = if which == 0 {
                        &mut p.layers[li].weights[k]
                    } else {
                        &mut p.layers[li].bias[k]
                    };
                    *slot += delta;
                    loss(&p, &refs, &labels).unwrap()
                };
                let numeric = (eval(H) - eval(-H)) / (2.0 * H);
                let analytic = if which == 0 {
                    r.grads[li].weights[k]
                } else {
                    r.grads[li].bias[k]
                };
                max_param_rel = max_param_rel.max(grad_error(analytic, numeric, &mut floored));
                params_checked += 1;
            }
        }
    }
    // ten input pixels spread over the first two examples
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let mut max_input_rel = 0.0f64;
    for t in 0..10 {
        let ex = t % 2;
        let px = rng.random_range(0..len);
        let eval = |delta: f64| {
            let mut x = inputs[ex].clone();
            x[px] += delta;
            loss(&params, &[x.as_slice()], &[labels[ex]]).unwrap()
        };
        let numeric = (eval(H) - eval(-H)) / (2.0 * H);
        max_input_rel = max_input_rel.max(grad_error(r.input_grads[ex][px], numeric, &mut floored));
    }
    GradReport {
        params_checked,
        inputs_checked: 10,
        max_param_rel,
        max_input_rel,
        floored,
    }
}

pub fn check_gradients() -> Check {
    Check::timed("gradient checks", secs(60), || {
        let r = gradient_report(17);
        (
            r.max_param_rel <= 1e-4 && r.max_input_rel <= 1e-4,
            format!(
                "{} parameters max rel err {:.1e}, {} input pixels max rel err {:.1e} ({} near-zero pairs compared absolutely)",
                r.params_checked, r.max_param_rel, r.inputs_checked, r.max_input_rel, r.floored
            ),
        )
    })
}

// ---------------------------------------------------------------------------
// Rendered synthetic images.

/// `per_class` rendered images of every stage from one synthetic night,
/// percentile-scaled over the night's own-epoch columns.
pub fn synthetic_image_set(per_class: usize, seed: u64) -> ImageSet {
    let n = 5 * per_class;
    // two padding epochs on each side so every image has full context
    let mut stages = vec![SleepStage::W; 2];
    stages.extend((0..n).map(|k| SleepStage::ALL[(k / 2) % 5]));
    stages.extend([SleepStage::W; 2]);
    let night = synth_recording(&stages, 100.0, seed).with_identity("overfit", 1);
    let cfg = MultitaperConfig::default();
    let est = cfg.estimator().unwrap();
    let epochs: Vec<usize> = (2..2 + n).collect();
    let own = own_epoch_columns(&cfg);
    let power = epochs.iter().flat_map(|&k| {
        epoch_spectrogram_columns(&night.recording, k, &cfg, &est, own.clone())
            .unwrap()
            .power
    });
    let stats = PercentileStats::from_power(power).unwrap();
    let mut images = Vec::new();
    let mut records = Vec::new();
    for &k in &epochs {
        let spec = epoch_spectrogram(&night.recording, k, &cfg, &est).unwrap();
        let img = render_spectrogram(&spec, LogScaleMode::Percentile, Some(&stats)).unwrap();
        images.push(img.quantized());
        records.push(ManifestRecord {
            id: ManifestRecord::make_id("overfit", 1, k),
            subject: "overfit".into(),
            night: 1,
            epoch_index: k,
            label: stages[k],
            image_path: format!("{k}.png").into(),
        });
    }
    ImageSet::new([224, 224, 3], images, records).unwrap()
}

pub fn check_overfit() -> Check {
    Check::timed("overfit smoke", secs(600), || {
        let set = synthetic_image_set(10, 5);
        let config = TrainConfig {
            arch: DESK_ARCH.into(),
            batch_size: 10,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            seed: 3,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config).unwrap();
        let mut acc = 0.0;
        while trainer.epochs_done < 500 {
            trainer.sgd_epoch(&set).unwrap();
            acc = evaluate(&trainer.params, &set).unwrap().1;
            if acc >= 0.98 {
                break;
            }
        }
        (
            acc >= 0.98,
            format!(
                "{} images, training accuracy {:.3} after {} balanced epochs",
                set.len(),
                acc,
                trainer.epochs_done
            ),
        )
    })
}

// ---------------------------------------------------------------------------
// Pipeline runs.

/// Config for a run rooted at `root` with desk-scale training settings.
pub fn desk_config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        data_dir: root.join("data"),
        output_dir: root.join("out"),
        ..PipelineConfig::default()
    };
    cfg.training.batch_size = 32;
    cfg.training.max_epochs = 60;
    cfg.training.patience = 8;
    cfg.training.adam.lr = 1e-3;
    cfg
}

pub fn check_end_to_end() -> Check {
    Check::timed("end-to-end desk scale", secs(1200), || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = desk_config(dir.path());
        let outcome = (|| -> sleepvis::Result<(f64, Vec<(String, f64)>)> {
            pipeline::cmd_synth(&cfg)?;
            let report = pipeline::run_all(&cfg)?;
            let layout = pipeline::Layout::new(&cfg.output_dir);
            let mut per_fold = Vec::new();
            for k in 0..report.n_subjects {
                let text = std::fs::read_to_string(layout.predictions(k).join("confusion.json")).unwrap();
                let cm: ConfusionMatrix = serde_json::from_str(&text).unwrap();
                per_fold.push((cm.subject.clone().unwrap_or_default(), balanced_accuracy(&cm)?));
            }
            Ok((report.balanced_accuracy, per_fold))
        })();
        match outcome {
            Ok((overall, per_fold)) => {
                let worst = per_fold.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                let folds: Vec<String> = per_fold.iter().map(|(s, b)| format!("{s} {b:.3}")).collect();
                (
                    worst >= 0.6,
                    format!(
                        "held-out balanced accuracy {} (aggregate {overall:.3}, chance 0.2)",
                        folds.join(", ")
                    ),
                )
            }
            Err(e) => (false, format!("pipeline failed: {e}")),
        }
    })
}

fn random_matrices(n: usize, seed: u64) -> Vec<ConfusionMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|s| {
            let mut counts = [[0u64; 5]; 5];
            for (i, row) in counts.iter_mut().enumerate() {
                for (j, c) in row.iter_mut().enumerate() {
                    *c = if i == j { rng.random_range(20..80) } else { rng.random_range(0..15) };
                }
            }
            let mut m = ConfusionMatrix::from_counts(counts);
            m.subject = Some(format!("s{s}"));
            m
        })
        .collect()
}

pub fn check_bootstrap() -> Check {
    Check::timed("bootstrap determinism and ordering", secs(10), || {
        let ms = random_matrices(20, 8);
        let a = bootstrap_ci(&ms, 1000, 99).unwrap();
        let b = bootstrap_ci(&ms, 1000, 99).unwrap();
        let triples = [a.precision, a.sensitivity, a.f1, a.accuracy];
        let ordered = triples.iter().all(|t| t.low <= t.mid && t.mid <= t.high);
        let same = vec![ms[0].clone(); 20];
        let d = bootstrap_ci(&same, 1000, 99).unwrap();
        let point = [d.precision, d.sensitivity, d.f1, d.accuracy]
            .iter()
            .all(|t| t.low == t.mid && t.mid == t.high);
        (
            a == b && ordered && point && a.positions == [26, 500, 975],
            format!(
                "repeatable {}, ordered {ordered}, identical matrices collapse {point}, positions {:?}, F1 {:.2}-{:.2}-{:.2}",
                a == b,
                a.positions,
                a.f1.low,
                a.f1.mid,
                a.f1.high
            ),
        )
    })
}

/// Every file under `dir` as `(relative path, bytes)`, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Small corpus taken through rendering and one fold's training.
pub fn small_run(root: &Path) -> sleepvis::Result<PipelineConfig> {
    let mut cfg = desk_config(root);
    cfg.synth.nights = 1;
    cfg.synth.epochs_per_night = 24;
    cfg.training.max_epochs = 3;
    cfg.training.batch_size = 16;
    pipeline::cmd_synth(&cfg)?;
    pipeline::cmd_ingest(&cfg)?;
    pipeline::cmd_render(&cfg)?;
    pipeline::cmd_split(&cfg)?;
    pipeline::cmd_train(&cfg, 0)?;
    Ok(cfg)
}

pub fn check_determinism() -> Check {
    Check::timed("determinism", None, || {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (ca, cb) = match (small_run(a.path()), small_run(b.path())) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(e), _) | (_, Err(e)) => return (false, format!("run failed: {e}")),
        };
        let (la, lb) = (
            pipeline::Layout::new(&ca.output_dir),
            pipeline::Layout::new(&cb.output_dir),
        );
        let (ia, ib) = (tree(&la.images()), tree(&lb.images()));
        let log = |l: &pipeline::Layout| std::fs::read(l.model_dir(0).join("training_log.jsonl")).unwrap();
        let (ta, tb) = (log(&la), log(&lb));
        let (pa, pb) = (tree(&la.model_dir(0).join("params")), tree(&lb.model_dir(0).join("params")));
        let pngs = ia.iter().filter(|(n, _)| n.ends_with(".png")).count();
        (
            ia == ib && ta == tb && pa == pb && pngs > 0,
            format!(
                "{pngs} PNGs identical {}, training log identical {} ({} bytes), checkpoint tensors identical {}",
                ia == ib,
                ta == tb,
                ta.len(),
                pa == pb
            ),
        )
    })
}
