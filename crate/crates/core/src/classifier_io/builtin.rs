//! The built-in network behind the backend protocol. These functions are
//! what `invoke_*` run in builtin mode and what the `sleepvis-backend`
//! executable runs for each subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::tensor::Tensor;
use super::{IoProtocolError, ModelMeta};
use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::refcnn::{
    argmax, chw_to_hwc, load_checkpoint, loss_and_gradients, predict_set, save_checkpoint, train, ImageSet,
    ModelParams, TrainConfig,
};

pub const BUILTIN_NAME: &str = "sleepvis-refcnn";
pub const TRAINING_LOG: &str = "training_log.jsonl";

/// Examples per input-gradient pass.
const GRAD_CHUNK: usize = 16;

fn load_set(manifest: &Path, shape: [usize; 3]) -> Result<ImageSet> {
    let m = Manifest::load(manifest)?;
    Ok(ImageSet::load(&m, shape)?)
}

fn load_model(model_dir: &Path) -> Result<ModelParams<f32>> {
    ModelMeta::load(model_dir)?;
    let (params, _) = load_checkpoint(model_dir)?;
    Ok(params)
}

/// Train on `train_manifest`, early-stop on `val_manifest`, and write the
/// checkpoint, `training_log.jsonl` and `model.meta.json` into `out_dir`.
pub fn builtin_train(train_manifest: &Path, val_manifest: &Path, out_dir: &Path, config: &TrainConfig) -> Result<PathBuf> {
    let train_set = load_set(train_manifest, config.input_shape)?;
    let val_set = load_set(val_manifest, config.input_shape)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(TRAINING_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut write_err = None;
    let outcome = train(config, &train_set, &val_set, |e| {
        log::info!(
            "epoch {:>3}  train {:.4}  val {:.4}  acc {:.3}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_accuracy
        );
        let line = serde_json::to_string(e).expect("log entries serialize");
        if let Err(err) = writeln!(log, "{line}") {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(Error::io(&log_path, err));
    }
    save_checkpoint(out_dir, &outcome.params, config.seed, outcome.best_step, outcome.best_epoch)?;
    let cfg = serde_json::to_value(config).expect("config serializes");
    ModelMeta::new(BUILTIN_NAME, "builtin", cfg).save(out_dir)?;
    Ok(out_dir.to_path_buf())
}

/// Probabilities `[n, 5]` for the manifest, written to `out`.
pub fn builtin_predict(model_dir: &Path, manifest: &Path, out: &Path) -> Result<Tensor> {
    let params = load_model(model_dir)?;
    let set = load_set(manifest, params.spec.input_shape)?;
    let probs = predict_set(&params, &set)?;
    let k = params.spec.num_classes();
    let t = Tensor::f32(&[set.len(), k], probs.concat())?;
    t.write(out)?;
    Ok(t)
}

/// Per-example gradients `[n, H, W, 3]` of the cross-entropy at the true
/// label (or the predicted label) with respect to the input pixels in
/// `[0, 1]`, written to `out`.
pub fn builtin_input_grad(model_dir: &Path, manifest: &Path, out: &Path, use_predicted: bool) -> Result<Tensor> {
    let params = load_model(model_dir)?;
    let set = load_set(manifest, params.spec.input_shape)?;
    let t = input_gradients(&params, &set, use_predicted)?;
    t.write(out)?;
    Ok(t)
}

pub fn input_gradients(params: &ModelParams<f32>, set: &ImageSet, use_predicted: bool) -> Result<Tensor> {
    let [h, w, c] = params.spec.input_shape;
    let labels = if use_predicted {
        predict_set(params, set)?.iter().map(|p| argmax(p)).collect()
    } else {
        set.labels()
    };
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut data = Vec::with_capacity(set.len() * h * w * c);
    for chunk in idx.chunks(GRAD_CHUNK) {
        let x = set.inputs(chunk);
        let refs: Vec<&[f32]> = x.iter().map(Vec::as_slice).collect();
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let r = loss_and_gradients(params, &refs, &y, false, 0, true)?;
        for g in &r.input_grads {
            data.extend(chw_to_hwc(g, h, w, c));
        }
    }
    Ok(Tensor::f32(&[set.len(), h, w, c], data)?)
}

impl From<Error> for IoProtocolError {
    fn from(e: Error) -> Self {
        match e {
            Error::Protocol(p) => p,
            other => IoProtocolError::BackendFailed {
                command: BUILTIN_NAME.to_string(),
                status: "error".to_string(),
                stderr: other.to_string(),
            },
        }
    }
}
