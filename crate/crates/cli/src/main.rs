//! `sleepvis`: run the pipeline one stage at a time, or end to end.
//!
//! Exit status is 0 on success, 1 when a stage fails (bad data, missing
//! prerequisite, backend error) and 2 for usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sleepvis::classifier_io::BackendDescriptor;
use sleepvis::pipeline::{self, PipelineConfig};
use sleepvis::SleepStage;

#[derive(Parser, Debug)]
#[command(name = "sleepvis", version, about = "EEG sleep staging from multitaper images")]
struct Cli {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the numeric kernels.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `builtin` or the path of an external backend executable.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic EDF corpus into data_dir.
    Synth,
    /// Parse and label every recording in data_dir.
    Ingest,
    /// Render one image per labeled epoch.
    Render,
    /// Build leave-one-subject-out folds.
    Split,
    /// Train one fold, or every fold without --fold.
    Train {
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Predict held-out subjects, one fold or all.
    Predict {
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Confusion matrices, metrics and bootstrap intervals over all folds.
    Evaluate,
    /// Render sensitivity maps.
    Sensitivity {
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        stage: Option<SleepStage>,
    },
    /// ingest, render, split, train, predict, evaluate, sensitivity.
    Run,
}

fn folds(cfg: &PipelineConfig, fold: Option<usize>) -> sleepvis::Result<Vec<usize>> {
    match fold {
        Some(k) => Ok(vec![k]),
        None => {
            let index = pipeline::Layout::new(&cfg.output_dir).folds_index();
            let text = std::fs::read_to_string(&index).map_err(|_| sleepvis::Error::MissingArtifact(index))?;
            let n = serde_json::from_str::<Vec<serde_json::Value>>(&text)
                .map_err(|e| sleepvis::Error::Config(format!("folds index: {e}")))?
                .len();
            Ok((0..n).collect())
        }
    }
}

fn execute(cli: Cli) -> sleepvis::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(flag) = &cli.backend {
        cfg.backend = BackendDescriptor::from_flag(flag);
    }
    cfg.validate()?;
    if cli.print_config {
        print!("{}", cfg.to_json());
        return Ok(());
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| sleepvis::Error::Config(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::Synth => {
            let files = pipeline::cmd_synth(&cfg)?;
            println!("wrote {} files to {}", files.len(), cfg.data_dir.display());
        }
        Command::Ingest => {
            for e in pipeline::cmd_ingest(&cfg)? {
                println!("{}: {} labeled epochs", e.stem, e.manifest.num_epochs - e.manifest.excluded);
            }
        }
        Command::Render => {
            let m = pipeline::cmd_render(&cfg)?;
            println!("rendered {} images", m.len());
        }
        Command::Split => {
            for (k, f) in pipeline::cmd_split(&cfg)?.iter().enumerate() {
                println!(
                    "fold {k}: test {} val {:?} train {:?}",
                    f.test_subject, f.validation_subjects, f.train_subjects
                );
            }
        }
        Command::Train { fold } => {
            for k in folds(&cfg, fold)? {
                let dir = pipeline::cmd_train(&cfg, k)?;
                println!("fold {k}: model in {}", dir.display());
            }
        }
        Command::Predict { fold } => {
            for k in folds(&cfg, fold)? {
                let cm = pipeline::cmd_predict(&cfg, k)?;
                println!("fold {k}: {} test epochs", cm.total());
            }
        }
        Command::Evaluate => print!("{}", pipeline::cmd_evaluate(&cfg)?.to_text()),
        Command::Sensitivity { subject, stage } => {
            for (map, path) in pipeline::cmd_sensitivity(&cfg, subject.as_deref(), stage)? {
                println!("{} ({} examples)", path.display(), map.n_examples);
            }
        }
        Command::Run => print!("{}", pipeline::run_all(&cfg)?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
