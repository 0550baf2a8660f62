use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier_io::BackendDescriptor;
use crate::error::{Error, Result};
use crate::imaging::LogScaleMode;
use crate::multitaper::MultitaperConfig;
use crate::refcnn::TrainConfig;
use crate::stage::SleepStage;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub nights: u32,
    pub epochs_per_night: usize,
    pub fs: f64,
    pub seed: u64,
    /// Fixed stage sequence for every night instead of a seeded plan.
    pub stage_plan: Option<Vec<SleepStage>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 3,
            nights: 2,
            epochs_per_night: 80,
            fs: 100.0,
            seed: 0,
            stage_plan: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            iterations: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    /// Take the gradient at the predicted instead of the true label.
    pub use_predicted: bool,
}

/// Everything a pipeline run depends on. Every field has a default, so a
/// config file only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Substring of the EEG signal label, e.g. `Fpz-Cz`.
    pub channel: String,
    pub multitaper: MultitaperConfig,
    pub log_scale: LogScaleMode,
    pub fold_seed: u64,
    pub backend: BackendDescriptor,
    pub training: TrainConfig,
    pub bootstrap: BootstrapConfig,
    pub sensitivity: SensitivityConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            channel: "Fpz-Cz".into(),
            multitaper: MultitaperConfig::default(),
            log_scale: LogScaleMode::default(),
            fold_seed: 0,
            backend: BackendDescriptor::builtin(),
            training: TrainConfig::default(),
            bootstrap: BootstrapConfig::default(),
            sensitivity: SensitivityConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parse a JSON config; relative `data_dir`/`output_dir` resolve against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for dir in [&mut cfg.data_dir, &mut cfg.output_dir] {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.multitaper.validate()?;
        self.backend.validate()?;
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be positive".into()));
        }
        Ok(())
    }

    /// One seed for every seeded stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.fold_seed = seed;
        self.training.seed = seed;
        self.bootstrap.seed = seed;
        self.synth.seed = seed;
    }
}
