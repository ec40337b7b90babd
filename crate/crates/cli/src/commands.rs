//! Subcommand implementations plus the reproducibility stamp every run
//! writes beside its outputs.

use crate::config::RunConfig;
use crate::CliError;
use anyhow::Context;
use log::info;
use serde_json::json;
use std::path::{Path, PathBuf};
use stt_core::cache::{CacheError, UtteranceCache};
use stt_core::checkpoint::{load_checkpoint, save_checkpoint};
use stt_core::data::{items_from_utterances, load_items, TrainItem};
use stt_core::model::init_model;
use stt_core::profiler::{run_sweep, SweepData};
use stt_core::trainer::run_personalization;
use stt_core::{audio, eval, synth};

/// Format versions of the artifacts this build reads and writes.
const CHECKPOINT_FORMAT: u32 = 1;
const MANIFEST_FORMAT: u32 = 1;
const METRICS_FORMAT: u32 = 1;

fn write_stamp(out: &Path, command: &str, config: &RunConfig) -> Result<(), CliError> {
    let stamp = json!({
        "command": command,
        "config": config,
        "seeds": {
            "training": config.training.seed,
            "synth": config.synth.seed,
            "sweep": config.sweep.seed,
        },
        "format_versions": {
            "checkpoint": CHECKPOINT_FORMAT,
            "manifest": MANIFEST_FORMAT,
            "metrics": METRICS_FORMAT,
        },
        "unix_time_s": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let path = out.join("run_stamp.json");
    std::fs::write(&path, serde_json::to_string_pretty(&stamp).expect("stamp serializes"))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Splits items into (train, validation) with the configured validation size.
fn split_validation(
    items: Vec<TrainItem>,
    validation_size: usize,
    seed: u64,
) -> Result<(Vec<TrainItem>, Vec<TrainItem>), CliError> {
    let count = items.len();
    stt_core::data::split_validation(items, validation_size, seed).ok_or_else(|| {
        CliError::Precondition(format!(
            "need more than {validation_size} utterances to hold out validation, have {count}"
        ))
    })
}

pub fn synth(
    config: &RunConfig,
    out: &Path,
    voices: Option<usize>,
    utterances: Option<usize>,
) -> Result<(), CliError> {
    let mut spec = config.synth.clone();
    if let Some(v) = voices {
        spec.voices = v;
    }
    if let Some(u) = utterances {
        spec.utterances_per_voice = u;
    }
    if spec.voices == 0 {
        return Err(CliError::Config("voices must be >= 1".into()));
    }
    let output = synth::generate_corpus(&spec, out).context("generating corpus")?;
    info!(
        "wrote {} utterances across {} voices to {}",
        output.entries,
        spec.voices,
        out.display()
    );
    println!("{}", output.manifest.display());
    write_stamp(out, "synth", config)
}

pub fn pretrain(config: &RunConfig, out: &Path, manifest: &Path) -> Result<(), CliError> {
    config.validate()?;
    let items = load_items(manifest).context("loading manifest")?;
    info!("loaded {} utterances from {}", items.len(), manifest.display());
    let (train, val) = split_validation(items, config.training.validation_size, config.training.seed)?;

    let params = init_model(&config.model, config.training.seed).context("initializing model")?;
    let init_path = out.join("init.ckpt");
    save_checkpoint(&params, &config.model, &init_path).context("saving initial checkpoint")?;

    let session_dir = out.join("pretrain_session");
    let outcome = run_personalization(
        &config.model,
        &init_path,
        &train,
        &val,
        &config.training,
        &session_dir,
    )
    .context("pretraining")?;

    let baseline = out.join("baseline.ckpt");
    save_checkpoint(&outcome.params, &config.model, &baseline).context("saving baseline")?;
    info!(
        "pretrained {} epochs (best {}), baseline at {}",
        outcome.history.len(),
        outcome.best_epoch,
        baseline.display()
    );
    println!("{}", baseline.display());
    write_stamp(out, "pretrain", config)
}

pub fn personalize(
    config: &RunConfig,
    out: &Path,
    baseline: &Path,
    cache_root: Option<&Path>,
) -> Result<(), CliError> {
    config.validate()?;
    let root = cache_root
        .map(PathBuf::from)
        .or_else(|| config.cache_root.clone())
        .ok_or_else(|| CliError::Config("no cache root given (flag or config)".into()))?;

    let mut cache =
        UtteranceCache::open(&root, config.training.cache_trigger).context("opening cache")?;
    let (train_utts, val_utts, token) =
        match cache.drain(config.training.validation_size, config.training.seed) {
            Ok(parts) => parts,
            Err(CacheError::NotReady { count, trigger }) => {
                return Err(CliError::Precondition(format!(
                    "cache not ready: {count} utterances cached, trigger N is {trigger}"
                )));
            }
            Err(e) => return Err(e.into()),
        };

    info!(
        "training on {} utterances, validating on {}",
        train_utts.len(),
        val_utts.len()
    );
    let train = items_from_utterances(&root, &train_utts).context("featurizing train split")?;
    let val = items_from_utterances(&root, &val_utts).context("featurizing validation split")?;

    let session_dir = out.join("session");
    let outcome = run_personalization(
        &config.model,
        baseline,
        &train,
        &val,
        &config.training,
        &session_dir,
    )
    .context("personalizing")?;

    let personalized = out.join("personalized.ckpt");
    save_checkpoint(&outcome.params, &config.model, &personalized)
        .context("saving personalized checkpoint")?;
    std::fs::copy(session_dir.join("metrics.jsonl"), out.join("metrics.jsonl"))
        .context("copying metrics")?;

    // The session completed; only now may the cache drop its data.
    cache.confirm(token).context("clearing cache")?;

    info!(
        "personalized over {} epochs (best {}), checkpoint at {}",
        outcome.history.len(),
        outcome.best_epoch,
        personalized.display()
    );
    println!("{}", personalized.display());
    write_stamp(out, "personalize", config)
}

pub fn eval(
    config: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    manifest: &Path,
) -> Result<(), CliError> {
    config.validate()?;
    let items = load_items(manifest).context("loading manifest")?;
    if items.is_empty() {
        return Err(CliError::Precondition(format!(
            "manifest {} is empty",
            manifest.display()
        )));
    }
    let params = load_checkpoint(checkpoint, &config.model).context("loading checkpoint")?;
    let report = eval::evaluate_set(&config.model, &params, &items).context("evaluating")?;

    let path = out.join("report.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .with_context(|| format!("writing {}", path.display()))?;
    info!(
        "mean WER {:.2}% (word-weighted {:.2}%), mean loss {:.4} over {} utterances",
        report.mean_wer,
        report.word_weighted_wer,
        report.mean_loss,
        report.items.len()
    );
    println!("{}", path.display());
    write_stamp(out, "eval", config)
}

pub fn sweep(
    config: &RunConfig,
    out: &Path,
    baseline: &Path,
    manifest: &Path,
) -> Result<(), CliError> {
    config.validate()?;
    config
        .sweep
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let items = load_items(manifest).context("loading manifest")?;
    let (train, val) = split_validation(items, config.training.validation_size, config.sweep.seed)?;

    let work_dir = out.join("sweep_sessions");
    let data = SweepData {
        model: &config.model,
        baseline_checkpoint: baseline,
        train: &train,
        val: &val,
        base_config: &config.training,
        work_dir: &work_dir,
    };
    let rows = run_sweep(&config.sweep, &data, out).context("running sweep")?;
    for row in &rows {
        info!(
            "batch {} lr {:e} {}: epochs {}, wer {:.2}%, {:.2}s/epoch [{}]",
            row.batch, row.lr, row.freeze, row.epochs, row.final_wer, row.mean_epoch_s, row.status
        );
    }
    println!("{}", out.join("sweep.csv").display());
    write_stamp(out, "sweep", config)
}

pub fn featurize(out: &Path, wav: &Path) -> Result<(), CliError> {
    let audio = audio::read_wav(wav).context("reading WAV")?;
    let features = audio::log_mel(&audio).context("featurizing")?;
    let path = out.join("features.csv");
    let mut text = String::new();
    for row in features.frames().rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    info!(
        "{} frames x {} bins -> {}",
        features.num_frames(),
        features.num_bins(),
        path.display()
    );
    println!("{}", path.display());
    Ok(())
}
