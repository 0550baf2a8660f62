//! `sleepvis-backend`: the built-in network behind the external backend
//! command line, so the subprocess path can be exercised end to end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sleepvis::classifier_io::{builtin_input_grad, builtin_predict, builtin_train};
use sleepvis::refcnn::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "sleepvis-backend", version)]
struct Cli {
    /// Training config JSON; accepted by every subcommand so one set of
    /// extra arguments serves all three.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    InputGrad {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        use_predicted: bool,
    },
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Train { train, val, out } => {
            let cfg = match cli.config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                    serde_json::from_str::<TrainConfig>(&text).map_err(|e| format!("{}: {e}", p.display()))?
                }
                None => TrainConfig::default(),
            };
            builtin_train(&train, &val, &out, &cfg).map_err(|e| e.to_string())?;
        }
        Command::Predict { model, manifest, out } => {
            builtin_predict(&model, &manifest, &out).map_err(|e| e.to_string())?;
        }
        Command::InputGrad {
            model,
            manifest,
            out,
            use_predicted,
        } => {
            builtin_input_grad(&model, &manifest, &out, use_predicted).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sleepvis-backend: {e}");
            ExitCode::from(1)
        }
    }
}
