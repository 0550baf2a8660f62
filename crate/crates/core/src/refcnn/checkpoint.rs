use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{LayerParams, ModelParams};
use super::spec::ModelSpec;
use super::ModelError;
use crate::classifier_io::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub index: usize,
    pub weights: PathBuf,
    pub bias: PathBuf,
}

/// JSON header of a saved model; parameter blobs sit next to it as
/// float32 tensor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub arch: String,
    pub input_shape: [usize; 3],
    pub dropout_rate: f64,
    pub init_seed: u64,
    pub train_seed: u64,
    pub step: u64,
    pub best_epoch: u64,
    pub layers: Vec<LayerEntry>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ck_err(path: &Path, message: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Write `checkpoint.json` and `params/layerNN_{w,b}.tnsr` under `dir`.
pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParams<f32>,
    train_seed: u64,
    step: u64,
    best_epoch: u64,
) -> Result<(), ModelError> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(io_err(&pdir))?;
    let mut layers = Vec::new();
    for (i, l) in params.layers.iter().enumerate() {
        if l.weights.is_empty() {
            continue;
        }
        let w = PathBuf::from(format!("params/layer{i:02}_w.tnsr"));
        let b = PathBuf::from(format!("params/layer{i:02}_b.tnsr"));
        let wt = Tensor::f32(&l.weight_dims, l.weights.clone()).map_err(|e| ck_err(dir, e.to_string()))?;
        let bt = Tensor::f32(&[l.bias.len()], l.bias.clone()).map_err(|e| ck_err(dir, e.to_string()))?;
        wt.write(&dir.join(&w)).map_err(|e| ck_err(dir, e.to_string()))?;
        bt.write(&dir.join(&b)).map_err(|e| ck_err(dir, e.to_string()))?;
        layers.push(LayerEntry {
            index: i,
            weights: w,
            bias: b,
        });
    }
    let header = CheckpointHeader {
        format: FORMAT,
        arch: params.spec.arch.clone(),
        input_shape: params.spec.input_shape,
        dropout_rate: params.spec.dropout_rate,
        init_seed: params.seed,
        train_seed,
        step,
        best_epoch,
        layers,
    };
    let path = dir.join(CHECKPOINT_FILE);
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams<f32>, CheckpointHeader), ModelError> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| ck_err(&path, e.to_string()))?;
    if header.format != FORMAT {
        return Err(ck_err(&path, format!("unsupported format {}", header.format)));
    }
    let spec = ModelSpec::parse(&header.arch, header.input_shape, header.dropout_rate)?;
    let mut params = ModelParams::<f32>::init_xavier(&spec, header.init_seed)?;
    let mut seen = vec![false; params.layers.len()];
    for entry in &header.layers {
        let slot: &mut LayerParams<f32> = params
            .layers
            .get_mut(entry.index)
            .ok_or_else(|| ck_err(&path, format!("layer {} out of range", entry.index)))?;
        let read = |p: &Path| -> Result<Tensor, ModelError> {
            Tensor::read(&dir.join(p)).map_err(|e| ck_err(&dir.join(p), e.to_string()))
        };
        let w = read(&entry.weights)?;
        let b = read(&entry.bias)?;
        if w.dims_usize() != slot.weight_dims || b.dims_usize() != [slot.bias.len()] {
            return Err(ck_err(&path, format!("layer {} has the wrong shape", entry.index)));
        }
        slot.weights = w.into_f32().ok_or_else(|| ck_err(&path, "weights are not float32"))?;
        slot.bias = b.into_f32().ok_or_else(|| ck_err(&path, "bias is not float32"))?;
        seen[entry.index] = true;
    }
    if let Some(i) = params
        .layers
        .iter()
        .enumerate()
        .position(|(i, l)| !l.weights.is_empty() && !seen[i])
    {
        return Err(ck_err(&path, format!("layer {i} missing")));
    }
    Ok((params, header))
}
