use std::ffi::OsString;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::builtin::{builtin_input_grad, builtin_predict, builtin_train};
use super::tensor::{DType, Tensor};
use super::{BackendDescriptor, BackendMode, IoProtocolError, ModelMeta, META_FILE};
use crate::dataset::Manifest;
use crate::imaging::decode_png;
use crate::refcnn::TrainConfig;
use crate::stage::NUM_STAGES;

const POLL: Duration = Duration::from_millis(20);

fn run_external(desc: &BackendDescriptor, args: Vec<OsString>) -> Result<(), IoProtocolError> {
    desc.validate()?;
    let exe = desc.executable.as_ref().expect("validated");
    let command = format!(
        "{} {}",
        exe.display(),
        args.iter().map(|a| a.to_string_lossy()).collect::<Vec<_>>().join(" ")
    );
    log::info!("running {command}");
    let mut child = Command::new(exe)
        .args(&args)
        .args(&desc.extra_args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| IoProtocolError::BackendFailed {
            command: command.clone(),
            status: "not started".into(),
            stderr: e.to_string(),
        })?;
    let mut stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let out_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let deadline = desc.timeout_s.map(|s| Instant::now() + Duration::from_secs(s));
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {}
            Err(e) => return Err(IoProtocolError::io(exe, e)),
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(IoProtocolError::Timeout {
                command,
                secs: desc.timeout_s.unwrap(),
            });
        }
        thread::sleep(POLL);
    };
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    for line in out.lines() {
        log::debug!("backend: {line}");
    }
    if !status.success() {
        return Err(IoProtocolError::BackendFailed {
            command,
            status: status.to_string(),
            stderr: err.trim_end().to_string(),
        });
    }
    Ok(())
}

fn os(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Vec<OsString> {
    args.iter().map(|a| a.as_ref().to_os_string()).collect()
}

/// Train a model into `out_dir`; `training` configures the builtin network
/// and is ignored by external backends.
pub fn invoke_train(
    desc: &BackendDescriptor,
    training: &TrainConfig,
    train_manifest: &Path,
    val_manifest: &Path,
    out_dir: &Path,
) -> Result<PathBuf, IoProtocolError> {
    if !desc.capabilities.train {
        return Err(IoProtocolError::CapabilityMissing("train"));
    }
    match desc.mode {
        BackendMode::Builtin => {
            builtin_train(train_manifest, val_manifest, out_dir, training)?;
        }
        BackendMode::External => {
            std::fs::create_dir_all(out_dir).map_err(|e| IoProtocolError::io(out_dir, e))?;
            run_external(
                desc,
                os(&[&"train", &"--train", &train_manifest, &"--val", &val_manifest, &"--out", &out_dir]),
            )?;
        }
    }
    if !out_dir.join(META_FILE).is_file() {
        return Err(IoProtocolError::MissingArtifact(out_dir.join(META_FILE)));
    }
    ModelMeta::load(out_dir)?;
    Ok(out_dir.to_path_buf())
}

fn manifest_len(manifest: &Path) -> Result<Manifest, IoProtocolError> {
    Manifest::load(manifest).map_err(|e| IoProtocolError::from(crate::Error::from(e)))
}

fn require_model(model_dir: &Path) -> Result<(), IoProtocolError> {
    let meta = model_dir.join(META_FILE);
    if !meta.is_file() {
        return Err(IoProtocolError::MissingArtifact(meta));
    }
    Ok(())
}

/// Probabilities must be float32 `[n, 5]` with rows summing to 1 ± 1e−4.
pub fn validate_probabilities(t: &Tensor, n: usize) -> Result<(), IoProtocolError> {
    if t.dtype() != DType::F32 || t.dims != [n as u64, NUM_STAGES as u64] {
        return Err(IoProtocolError::MalformedTensor(format!(
            "expected float32 [{n}, {NUM_STAGES}], got {:?} {:?}",
            t.dtype(),
            t.dims
        )));
    }
    let data = t.as_f32().unwrap();
    for (row, p) in data.chunks_exact(NUM_STAGES).enumerate() {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(IoProtocolError::MalformedTensor(format!("row {row} has invalid probabilities")));
        }
        let sum: f64 = p.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(IoProtocolError::RowNotNormalized { row, sum });
        }
    }
    Ok(())
}

/// Gradients must be float32 `[n, h, w, 3]`.
pub fn validate_gradients(t: &Tensor, n: usize, h: usize, w: usize) -> Result<(), IoProtocolError> {
    if t.dtype() != DType::F32 || t.dims != [n as u64, h as u64, w as u64, 3] {
        return Err(IoProtocolError::MalformedTensor(format!(
            "expected float32 [{n}, {h}, {w}, 3], got {:?} {:?}",
            t.dtype(),
            t.dims
        )));
    }
    Ok(())
}

pub fn invoke_predict(
    desc: &BackendDescriptor,
    model_dir: &Path,
    manifest: &Path,
    out: &Path,
) -> Result<Tensor, IoProtocolError> {
    if !desc.capabilities.predict {
        return Err(IoProtocolError::CapabilityMissing("predict"));
    }
    require_model(model_dir)?;
    let n = manifest_len(manifest)?.len();
    match desc.mode {
        BackendMode::Builtin => {
            builtin_predict(model_dir, manifest, out)?;
        }
        BackendMode::External => run_external(
            desc,
            os(&[&"predict", &"--model", &model_dir, &"--manifest", &manifest, &"--out", &out]),
        )?,
    }
    let t = Tensor::read(out)?;
    validate_probabilities(&t, n)?;
    Ok(t)
}

pub fn invoke_input_grad(
    desc: &BackendDescriptor,
    model_dir: &Path,
    manifest: &Path,
    out: &Path,
    use_predicted: bool,
) -> Result<Tensor, IoProtocolError> {
    if !desc.capabilities.input_grad {
        return Err(IoProtocolError::CapabilityMissing("input_grad"));
    }
    require_model(model_dir)?;
    let m = manifest_len(manifest)?;
    let (h, w) = match m.records.first() {
        Some(r) => {
            let img = decode_png(&r.image_path).map_err(|e| IoProtocolError::from(crate::Error::from(e)))?;
            (img.height, img.width)
        }
        None => (224, 224),
    };
    match desc.mode {
        BackendMode::Builtin => {
            builtin_input_grad(model_dir, manifest, out, use_predicted)?;
        }
        BackendMode::External => {
            let mut args = os(&[&"input-grad", &"--model", &model_dir, &"--manifest", &manifest, &"--out", &out]);
            if use_predicted {
                args.push("--use-predicted".into());
            }
            run_external(desc, args)?
        }
    }
    let t = Tensor::read(out)?;
    validate_gradients(&t, m.len(), h, w)?;
    Ok(t)
}
