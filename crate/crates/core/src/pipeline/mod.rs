//! Stage-by-stage pipeline over an output directory. Each command validates
//! its config, records it under `logs/`, and reads only artifacts that an
//! earlier command wrote.

mod commands;
mod config;
mod pairing;

pub use commands::{
    cmd_evaluate, cmd_ingest, cmd_predict, cmd_render, cmd_sensitivity, cmd_split, cmd_synth, cmd_train,
    run_all, Layout, RecordingEntry,
};
pub use config::{BootstrapConfig, PipelineConfig, SensitivityConfig, SynthConfig, SCHEMA_VERSION};
pub use pairing::{find_nights, night_stem, NightFiles};
