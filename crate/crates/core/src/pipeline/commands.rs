use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::pairing::{find_nights, night_stem};
use crate::classifier_io::{invoke_input_grad, invoke_predict, invoke_train, ModelMeta, META_FILE};
use crate::dataset::synth::synth_edf_files;
use crate::dataset::{make_folds, stage_plan, synth_recording, FoldSpec, Manifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::eval_metrics::{ConfusionMatrix, EvalReport};
use crate::imaging::{encode_png, render_spectrogram, LogScaleMode, PercentileStats, Provenance};
use crate::ingest::{ingest_night, HypnogramSource, IngestedNight, LabeledEpoch, RecordingManifest};
use crate::multitaper::{epoch_spectrogram, epoch_spectrogram_columns, own_epoch_columns, MultitaperConfig};
use crate::refcnn::argmax;
use crate::rng::substream;
use crate::sensitivity::{render_map, SensitivityAccumulator, SensitivityMap};
use crate::stage::{SleepStage, NUM_STAGES};

/// Where every artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(output_dir: &Path) -> Self {
        Layout {
            root: output_dir.to_path_buf(),
        }
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn recordings(&self) -> PathBuf {
        self.root.join("recordings")
    }
    pub fn recordings_index(&self) -> PathBuf {
        self.recordings().join("index.json")
    }
    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }
    pub fn image_manifest(&self) -> PathBuf {
        self.images().join("manifest.jsonl")
    }
    pub fn folds(&self) -> PathBuf {
        self.root.join("folds")
    }
    pub fn folds_index(&self) -> PathBuf {
        self.folds().join("index.json")
    }
    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.folds().join(format!("fold_{fold}"))
    }
    pub fn model_dir(&self, fold: usize) -> PathBuf {
        self.root.join("models").join(format!("fold_{fold}"))
    }
    pub fn predictions(&self, fold: usize) -> PathBuf {
        self.root.join("predictions").join(format!("fold_{fold}"))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn sensitivity(&self) -> PathBuf {
        self.root.join("sensitivity")
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifacts serialize") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Validate the config and record it as `logs/<command>.config.json`.
fn start(cfg: &PipelineConfig, command: &str) -> Result<Layout> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    mkdir(&layout.logs())?;
    let path = layout.logs().join(format!("{command}.config.json"));
    fs::write(&path, cfg.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(layout)
}

/// Write a synthetic EDF corpus into `data_dir`: `subjects × nights` PSG and
/// hypnogram pairs named `synthNN_n<night>-{PSG,Hypnogram}.edf`.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    start(cfg, "synth")?;
    let s = &cfg.synth;
    mkdir(&cfg.data_dir)?;
    let mut written = Vec::new();
    for subj in 0..s.subjects {
        for night in 1..=s.nights {
            let stream = (subj as u64) << 16 | night as u64;
            let mut rng = substream(s.seed, stream);
            let (plan_seed, signal_seed) = (rng.next_u64(), rng.next_u64());
            let stages = match &s.stage_plan {
                Some(plan) => plan.clone(),
                None => stage_plan(s.epochs_per_night, plan_seed),
            };
            let subject = format!("synth{:02}", subj + 1);
            let synth = synth_recording(&stages, s.fs, signal_seed).with_identity(&subject, night);
            let (psg, hyp) = synth_edf_files(&synth, &stages)?;
            let stem = night_stem(&subject, night);
            for (suffix, bytes) in [("PSG", psg), ("Hypnogram", hyp)] {
                let path = cfg.data_dir.join(format!("{stem}-{suffix}.edf"));
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
        }
    }
    log::info!("wrote {} synthetic files to {}", written.len(), cfg.data_dir.display());
    Ok(written)
}

/// One ingested night as recorded under `recordings/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub stem: String,
    pub psg: PathBuf,
    pub hypnogram: PathBuf,
    pub manifest: RecordingManifest,
}

fn load_night(cfg: &PipelineConfig, subject: &str, night: u32, psg: &Path, hypnogram: &Path) -> Result<IngestedNight> {
    let psg_bytes = fs::read(psg).map_err(|e| Error::io(psg, e))?;
    let hyp_bytes = fs::read(hypnogram).map_err(|e| Error::io(hypnogram, e))?;
    let is_csv = hypnogram.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let text;
    let source = if is_csv {
        text = String::from_utf8_lossy(&hyp_bytes).to_string();
        HypnogramSource::Csv(&text)
    } else {
        HypnogramSource::Edf(&hyp_bytes)
    };
    Ok(ingest_night(&psg_bytes, source, &cfg.channel, subject, night)?)
}

/// Parse, trim and label every PSG/hypnogram pair in `data_dir`.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<Vec<RecordingEntry>> {
    let layout = start(cfg, "ingest")?;
    let nights = find_nights(&cfg.data_dir)?;
    if nights.is_empty() {
        return Err(Error::Config(format!(
            "no PSG/hypnogram pairs in {}",
            cfg.data_dir.display()
        )));
    }
    mkdir(&layout.recordings())?;
    let mut entries = Vec::new();
    for n in &nights {
        let ingested = load_night(cfg, &n.subject, n.night, &n.psg, &n.hypnogram)?;
        let stem = n.stem();
        let entry = RecordingEntry {
            stem: stem.clone(),
            psg: n.psg.clone(),
            hypnogram: n.hypnogram.clone(),
            manifest: ingested.manifest,
        };
        write_json(&layout.recordings().join(format!("{stem}.json")), &entry)?;
        let mut lines = String::new();
        for e in &ingested.labels.epochs {
            lines.push_str(&serde_json::to_string(e).expect("epochs serialize"));
            lines.push('\n');
        }
        let path = layout.recordings().join(format!("{stem}.epochs.jsonl"));
        fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
        log::info!(
            "{stem}: {} epochs, {} excluded",
            entry.manifest.num_epochs,
            entry.manifest.excluded
        );
        entries.push(entry);
    }
    let stems: Vec<&String> = entries.iter().map(|e| &e.stem).collect();
    write_json(&layout.recordings_index(), &stems)?;
    Ok(entries)
}

fn load_entries(layout: &Layout) -> Result<Vec<RecordingEntry>> {
    let stems: Vec<String> = read_json(&layout.recordings_index())?;
    stems
        .iter()
        .map(|s| read_json(&layout.recordings().join(format!("{s}.json"))))
        .collect()
}

fn multitaper_for(cfg: &MultitaperConfig, fs: f64) -> MultitaperConfig {
    if cfg.fs == fs {
        return cfg.clone();
    }
    log::warn!("recording sampled at {fs} Hz; multitaper config says {} Hz", cfg.fs);
    MultitaperConfig { fs, ..cfg.clone() }
}

/// Render one PNG per labeled epoch and write `images/manifest.jsonl`.
/// Percentile scaling uses per-recording statistics over the epochs' own
/// columns (the context columns are not counted twice).
pub fn cmd_render(cfg: &PipelineConfig) -> Result<Manifest> {
    let layout = start(cfg, "render")?;
    let entries = load_entries(&layout)?;
    mkdir(&layout.images())?;
    let mut records = Vec::new();
    let mut all_stats = BTreeMap::new();
    for entry in &entries {
        let m = &entry.manifest;
        let night = load_night(cfg, &m.subject, m.night, &entry.psg, &entry.hypnogram)?;
        let mt = multitaper_for(&cfg.multitaper, night.recording.fs);
        let estimator = mt.estimator()?;
        let epochs: &[LabeledEpoch] = &night.labels.epochs;
        let stats = match cfg.log_scale {
            LogScaleMode::LogPlusOne => None,
            LogScaleMode::Percentile => {
                let own = own_epoch_columns(&mt);
                let cols: Vec<Vec<f64>> = epochs
                    .par_iter()
                    .map(|e| {
                        epoch_spectrogram_columns(&night.recording, e.epoch_index, &mt, &estimator, own.clone())
                            .map(|s| s.power)
                    })
                    .collect::<Result<_, _>>()?;
                let stats = PercentileStats::from_power(cols.into_iter().flatten()).ok_or_else(|| {
                    Error::Config(format!("{}: no labeled epochs to take percentiles from", entry.stem))
                })?;
                all_stats.insert(entry.stem.clone(), stats);
                Some(stats)
            }
        };
        let rendered: Vec<ManifestRecord> = epochs
            .par_iter()
            .map(|e| -> Result<ManifestRecord> {
                let spec = epoch_spectrogram(&night.recording, e.epoch_index, &mt, &estimator)?;
                let mut image = render_spectrogram(&spec, cfg.log_scale, stats.as_ref())?;
                image.label = Some(e.stage);
                image.provenance = Some(Provenance {
                    subject: e.subject_id.clone(),
                    night: e.night,
                    epoch_index: e.epoch_index,
                });
                let name = image.file_name().expect("label and provenance set");
                encode_png(&image, &layout.images().join(&name))?;
                Ok(ManifestRecord {
                    id: ManifestRecord::make_id(&e.subject_id, e.night, e.epoch_index),
                    subject: e.subject_id.clone(),
                    night: e.night,
                    epoch_index: e.epoch_index,
                    label: e.stage,
                    image_path: PathBuf::from(name),
                })
            })
            .collect::<Result<_>>()?;
        log::info!("{}: rendered {} images", entry.stem, rendered.len());
        records.extend(rendered);
    }
    let manifest = Manifest::new(records)?;
    manifest.save(&layout.image_manifest())?;
    write_json(&layout.images().join("stats.json"), &all_stats)?;
    Ok(manifest)
}

fn fold_manifest_path(layout: &Layout, fold: usize, part: &str) -> PathBuf {
    layout.fold_dir(fold).join(format!("{part}.jsonl"))
}

/// Leave-one-subject-out folds over the rendered corpus.
pub fn cmd_split(cfg: &PipelineConfig) -> Result<Vec<FoldSpec>> {
    let layout = start(cfg, "split")?;
    require(&layout.image_manifest())?;
    let manifest = Manifest::load(&layout.image_manifest())?;
    let folds = make_folds(&manifest.subjects(), cfg.fold_seed)?;
    // fold manifests point back at the shared image directory
    let relink = |m: Manifest| Manifest {
        records: m
            .records
            .into_iter()
            .map(|mut r| {
                let name = r.image_path.file_name().expect("image paths name files").to_owned();
                r.image_path = Path::new("../../images").join(name);
                r
            })
            .collect(),
    };
    for (k, f) in folds.iter().enumerate() {
        mkdir(&layout.fold_dir(k))?;
        write_json(&layout.folds().join(format!("fold_{k}.json")), f)?;
        let parts = [
            ("train", f.train_subjects.clone()),
            ("val", f.validation_subjects.clone()),
            ("test", vec![f.test_subject.clone()]),
        ];
        for (part, subjects) in parts {
            relink(manifest.filter_subjects(&subjects)).save(&fold_manifest_path(&layout, k, part))?;
        }
    }
    write_json(&layout.folds_index(), &folds)?;
    Ok(folds)
}

fn load_folds(layout: &Layout) -> Result<Vec<FoldSpec>> {
    read_json(&layout.folds_index())
}

fn check_fold(folds: &[FoldSpec], fold: usize) -> Result<&FoldSpec> {
    folds
        .get(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} out of range ({} folds)", folds.len())))
}

/// Train fold `fold`'s model into `models/fold_<fold>`.
pub fn cmd_train(cfg: &PipelineConfig, fold: usize) -> Result<PathBuf> {
    let layout = start(cfg, "train")?;
    let folds = load_folds(&layout)?;
    check_fold(&folds, fold)?;
    let train = fold_manifest_path(&layout, fold, "train");
    let val = fold_manifest_path(&layout, fold, "val");
    require(&train)?;
    require(&val)?;
    let out = layout.model_dir(fold);
    mkdir(&out)?;
    Ok(invoke_train(&cfg.backend, &cfg.training, &train, &val, &out)?)
}

/// Predict the test subject of `fold`; writes `probs.tnsr` and `confusion.json`.
pub fn cmd_predict(cfg: &PipelineConfig, fold: usize) -> Result<ConfusionMatrix> {
    let layout = start(cfg, "predict")?;
    let folds = load_folds(&layout)?;
    let spec = check_fold(&folds, fold)?;
    let model = layout.model_dir(fold);
    require(&model.join(META_FILE))?;
    let test = fold_manifest_path(&layout, fold, "test");
    require(&test)?;
    let out_dir = layout.predictions(fold);
    mkdir(&out_dir)?;
    let probs = invoke_predict(&cfg.backend, &model, &test, &out_dir.join("probs.tnsr"))?;
    let meta = ModelMeta::load(&model)?;
    let manifest = Manifest::load(&test)?;
    let mut cm = ConfusionMatrix::zeros(meta.backend_name, Some(spec.test_subject.clone()));
    let p = probs.as_f32().expect("validated float32");
    for (r, row) in manifest.records.iter().zip(p.chunks_exact(NUM_STAGES)) {
        cm.add(r.label, SleepStage::from_index(argmax(row)).unwrap());
    }
    write_json(&out_dir.join("confusion.json"), &cm)?;
    Ok(cm)
}

/// Aggregate every fold's confusion matrix into `report/report.{json,txt}`.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvalReport> {
    let layout = start(cfg, "evaluate")?;
    let folds = load_folds(&layout)?;
    let matrices: Vec<ConfusionMatrix> = (0..folds.len())
        .map(|k| read_json(&layout.predictions(k).join("confusion.json")))
        .collect::<Result<_>>()?;
    let tag = matrices.first().map(|m| m.model_tag.clone()).unwrap_or_default();
    let report = EvalReport::build(&tag, &matrices, cfg.bootstrap.iterations, cfg.bootstrap.seed)?;
    mkdir(&layout.report())?;
    write_json(&layout.report().join("report.json"), &report)?;
    let txt = layout.report().join("report.txt");
    fs::write(&txt, report.to_text()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

/// Sensitivity maps from the held-out predictions of each fold: for
/// `subject`, the fold that tests it; for `None`, every fold. `stage = None`
/// renders every stage present.
pub fn cmd_sensitivity(
    cfg: &PipelineConfig,
    subject: Option<&str>,
    stage: Option<SleepStage>,
) -> Result<Vec<(SensitivityMap, PathBuf)>> {
    let layout = start(cfg, "sensitivity")?;
    let folds = load_folds(&layout)?;
    let selected: Vec<usize> = (0..folds.len())
        .filter(|&k| subject.is_none_or(|s| folds[k].test_subject == s))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "subject {} is not the test subject of any fold",
            subject.unwrap_or("?")
        )));
    }
    let out_dir = layout.sensitivity();
    mkdir(&out_dir)?;
    let mut acc = SensitivityAccumulator::new(subject.map(str::to_string));
    for &k in &selected {
        let model = layout.model_dir(k);
        require(&model.join(META_FILE))?;
        let test = fold_manifest_path(&layout, k, "test");
        require(&test)?;
        let grads_path = out_dir.join(format!("grads_fold_{k}.tnsr"));
        let grads = invoke_input_grad(&cfg.backend, &model, &test, &grads_path, cfg.sensitivity.use_predicted)?;
        acc.add(&grads, &Manifest::load(&test)?.records)?;
        drop(grads);
        fs::remove_file(&grads_path).map_err(|e| Error::io(&grads_path, e))?;
    }
    let stages: Vec<SleepStage> = match stage {
        Some(s) => vec![s],
        None => SleepStage::ALL.into_iter().filter(|s| acc.count(*s) > 0).collect(),
    };
    let mut out = Vec::new();
    for s in stages {
        let map = acc.finish(s)?;
        let png = out_dir.join(map.selection.file_name());
        render_map(&map, &png)?;
        map.save_raw(&png.with_extension("tnsr"))?;
        out.push((map, png));
    }
    Ok(out)
}

/// ingest → render → split → train/predict every fold → evaluate → maps.
pub fn run_all(cfg: &PipelineConfig) -> Result<EvalReport> {
    cmd_ingest(cfg)?;
    cmd_render(cfg)?;
    let folds = cmd_split(cfg)?;
    for k in 0..folds.len() {
        cmd_train(cfg, k)?;
        cmd_predict(cfg, k)?;
    }
    let report = cmd_evaluate(cfg)?;
    cmd_sensitivity(cfg, None, None)?;
    Ok(report)
}
