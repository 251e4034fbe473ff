//! `physkit`: reproducible experiments over the physkit modules.
//!
//! Exit codes: 0 success, 1 contract/parse/I-O error, 2 acceptance failure.

mod commands;
mod config;
mod gradcheck;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Predictions;
use config::{write_text, Flags, RunConfig, SEED_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] physkit::Error),
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: physkit::Error },
    #[error("config: {0}")]
    Config(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::InFile {
            path: path.to_path_buf(),
            source: e.into(),
        }
    }

    pub fn in_file(path: &Path, e: physkit::Error) -> Self {
        CliError::InFile {
            path: path.to_path_buf(),
            source: e,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "physkit", version, about = "Synthetic rPPG experiments: DDS, heart rate, training and checks")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset: waveform CSVs plus manifest.jsonl in --out
    Synth {
        /// Number of clips (default from config)
        #[arg(long)]
        count: Option<usize>,
    },
    /// Stationarize a waveform CSV; prints the stationarity report, writes z to --out
    Dds { input: PathBuf },
    /// Statistical cue of a waveform CSV as a JSON record
    Stats { input: PathBuf },
    /// Train the toy pipeline on a manifest; writes loss.csv, model.params, run.toml, hr.csv to --out
    Train {
        manifest: PathBuf,
        /// Held-out manifest for post-training heart-rate metrics
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Heart-rate metrics of predictions against a ground-truth manifest
    Eval {
        #[arg(long)]
        gt: PathBuf,
        /// Manifest of predicted waveforms, matched by clip id
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        pred: Option<PathBuf>,
        /// Trained parameters to predict with
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Exit with status 2 when MAE exceeds this many bpm
        #[arg(long)]
        max_mae: Option<f64>,
    },
    /// Finite-difference gradient audit of every trainable module
    Gradcheck,
    /// Heart rate of each waveform CSV
    Hr {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::resolve(&cli.flags, env_seed.as_deref())?;
    let out = cli.flags.out.as_deref();
    let mut stdout = std::io::stdout().lock();
    let mut emit = |text: &str| {
        let _ = stdout.write_all(text.as_bytes());
    };
    match cli.command {
        Command::Synth { count } => {
            let dir = out.unwrap_or(Path::new("dataset"));
            emit(&commands::synth(&cfg, count, dir)?);
        }
        Command::Dds { input } => emit(&commands::dds(&cfg, &input, out)?),
        Command::Stats { input } => emit(&commands::stats(&input, out)?),
        Command::Train { manifest, test } => {
            let dir = out.unwrap_or(Path::new("run"));
            let mut progress = |step: usize, loss: f64| {
                if step.is_multiple_of(20) {
                    eprintln!("step {step} loss {loss:.6}");
                }
            };
            let text = commands::train_cmd(&cfg, &manifest, test.as_deref(), dir, &mut progress)?;
            write_text(&dir.join("summary.txt"), &text)?;
            emit(&text);
        }
        Command::Eval {
            gt,
            pred,
            checkpoint,
            max_mae,
        } => {
            let source = match (&pred, &checkpoint) {
                (Some(p), _) => Predictions::Manifest(p),
                (None, Some(c)) => Predictions::Checkpoint(c),
                (None, None) => return Err(CliError::Config("eval needs --pred or --checkpoint".into())),
            };
            let (text, pass) = commands::eval(&cfg, &gt, source, out, max_mae)?;
            emit(&text);
            return Ok(pass);
        }
        Command::Gradcheck => {
            let (text, pass) = commands::gradcheck_cmd(&cfg, out)?;
            emit(&text);
            return Ok(pass);
        }
        Command::Hr { inputs } => emit(&commands::hr(&inputs)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
