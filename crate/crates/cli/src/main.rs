//! Operator entry point: synthesize data, pretrain a desk-scale baseline,
//! run personalization sessions against an utterance cache, evaluate, and
//! sweep hyperparameter grids.
//!
//! Exit codes: 0 success, 2 bad arguments or config, 3 precondition failure
//! (cache not ready, empty dataset), 4 runtime failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sttp", version, about = "Desk-scale speech-to-text personalization pipeline")]
struct Cli {
    /// TOML or JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the run configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts and the reproducibility stamp.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Log verbosity.
    #[arg(long, global = true, default_value = "info", value_parser = ["error", "warn", "info", "debug"])]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-voice corpus with known transcripts.
    Synth {
        /// Number of distinct synthetic voices.
        #[arg(long)]
        voices: Option<usize>,
        /// Utterances generated per voice.
        #[arg(long)]
        utterances: Option<usize>,
    },
    /// Train a baseline checkpoint from scratch on a manifest.
    Pretrain {
        /// JSONL manifest of {"audio", "text"} lines.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fine-tune a baseline on the utterances accumulated in a cache.
    Personalize {
        /// Baseline checkpoint to start from.
        #[arg(long)]
        baseline: PathBuf,
        /// Cache root directory (defaults to the config's cache_root).
        #[arg(long)]
        cache_root: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against a manifest and write a WER report.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL manifest of {"audio", "text"} lines.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the batch-size/learning-rate/freeze sweep and emit CSV + JSON.
    Sweep {
        /// Baseline checkpoint each cell starts from.
        #[arg(long)]
        baseline: PathBuf,
        /// JSONL manifest providing the train/validation data.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Convert one WAV file into its log-mel feature matrix (CSV).
    Featurize {
        /// Input WAV (PCM16 mono 16 kHz).
        #[arg(long)]
        wav: PathBuf,
    },
}

/// Error carrying the process exit code.
pub enum CliError {
    /// Exit 2: unusable configuration or arguments.
    Config(String),
    /// Exit 3: a runtime precondition does not hold yet.
    Precondition(String),
    /// Exit 4: the operation itself failed.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Precondition(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(4)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut run_config = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        run_config.apply_seed(seed);
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("creating {}: {e}", cli.out.display())))?;

    match &cli.command {
        Command::Synth { voices, utterances } => {
            commands::synth(&run_config, &cli.out, *voices, *utterances)
        }
        Command::Pretrain { manifest } => commands::pretrain(&run_config, &cli.out, manifest),
        Command::Personalize {
            baseline,
            cache_root,
        } => commands::personalize(&run_config, &cli.out, baseline, cache_root.as_deref()),
        Command::Eval {
            checkpoint,
            manifest,
        } => commands::eval(&run_config, &cli.out, checkpoint, manifest),
        Command::Sweep { baseline, manifest } => {
            commands::sweep(&run_config, &cli.out, baseline, manifest)
        }
        Command::Featurize { wav } => commands::featurize(&cli.out, wav),
    }
}
