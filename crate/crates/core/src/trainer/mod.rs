//! The personalization training engine: batched CTC training steps with
//! freeze-aware backpropagation, gradient clipping, Adam updates, per-epoch
//! quantized checkpoints, and the grace-epoch stopping criterion.

mod adam;
mod stopping;

pub use adam::AdamState;
pub use stopping::{EpochMetrics, StopDecision, StopState};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::ctc::{ctc_loss, CtcError};
use crate::data::TrainItem;
use crate::model::{backward, forward, FreezeSpec, Gradients, ModelConfig, ModelError, ParamSet};
use crate::profiler;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch item {index}: {source}")]
    Item {
        index: usize,
        #[source]
        source: CtcError,
    },
    #[error("loss became non-finite; step aborted, parameters unchanged")]
    NonFiniteLoss,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch has {got} items, configured batch size is {batch_size}")]
    BatchTooLarge { got: usize, batch_size: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Hyperparameters of one personalization session.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub freeze: FreezeSpec,
    pub seed: u64,
    pub grad_clip_norm: f64,
    pub cache_trigger: usize,
    pub validation_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 5,
            max_epochs: 20,
            learning_rate: 1e-5,
            freeze: FreezeSpec::NO_FROZEN,
            seed: 0,
            grad_clip_norm: 5.0,
            cache_trigger: 60,
            validation_size: 10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(TrainError::InvalidConfig("grad_clip_norm must be > 0".into()));
        }
        if self.validation_size == 0 || self.cache_trigger <= self.validation_size {
            return Err(TrainError::InvalidConfig(
                "cache_trigger must exceed validation_size, which must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One training step over a batch: forward, CTC loss, freeze-aware backward,
/// global-norm clip, Adam. On any error the parameters are left untouched.
/// Returns the mean loss over the batch, measured before the update.
pub fn train_step(
    model_config: &ModelConfig,
    params: &mut ParamSet,
    batch: &[&TrainItem],
    adam: &mut AdamState,
    config: &TrainingConfig,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if batch.len() > config.batch_size {
        return Err(TrainError::BatchTooLarge {
            got: batch.len(),
            batch_size: config.batch_size,
        });
    }

    let mut total_loss = 0.0;
    let mut accum = Gradients::new();
    for (index, item) in batch.iter().enumerate() {
        let (logits, tape) = forward(model_config, params, item.features.view())?;
        let t_len = logits.nrows();
        let result = ctc_loss(&logits, &item.label, t_len, item.label.len())
            .map_err(|source| TrainError::Item { index, source })?;
        if !result.loss.is_finite() {
            return Err(TrainError::NonFiniteLoss);
        }
        total_loss += result.loss;
        let grads = backward(model_config, params, tape, &result.dlogits, &config.freeze)?;
        accum.accumulate(&grads);
    }
    let mean_loss = total_loss / batch.len() as f64;
    if !mean_loss.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    accum.scale(1.0 / batch.len() as f64);

    let norm = accum.global_norm();
    if !norm.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    if norm > config.grad_clip_norm {
        accum.scale(config.grad_clip_norm / norm);
    }
    adam.apply(params, &accum, config.learning_rate);
    Ok(mean_loss)
}

/// Inference: forward pass plus greedy decoding. No state is touched.
pub fn predict(
    model_config: &ModelConfig,
    params: &ParamSet,
    features: &ndarray::Array2<f64>,
) -> Result<String, TrainError> {
    let (logits, _tape) = forward(model_config, params, features.view())?;
    Ok(crate::ctc::greedy_decode(&logits))
}

/// Mean CTC loss over a set, with no gradients and no mutation.
pub fn calc_loss(
    model_config: &ModelConfig,
    params: &ParamSet,
    items: &[TrainItem],
) -> Result<f64, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    for (index, item) in items.iter().enumerate() {
        let (logits, _tape) = forward(model_config, params, item.features.view())?;
        let t_len = logits.nrows();
        let result = ctc_loss(&logits, &item.label, t_len, item.label.len())
            .map_err(|source| TrainError::Item { index, source })?;
        total += result.loss;
    }
    Ok(total / items.len() as f64)
}

/// Produces the (validation loss, validation WER) pair after an epoch.
/// Scripted implementations drive the stopping-rule tests.
pub trait EpochEvaluator {
    fn evaluate(
        &mut self,
        model_config: &ModelConfig,
        params: &ParamSet,
        val_set: &[TrainItem],
    ) -> Result<(f64, f64), TrainError>;
}

/// The real evaluator: CTC loss plus greedy-decode WER over the validation set.
pub struct CtcWerEvaluator;

impl EpochEvaluator for CtcWerEvaluator {
    fn evaluate(
        &mut self,
        model_config: &ModelConfig,
        params: &ParamSet,
        val_set: &[TrainItem],
    ) -> Result<(f64, f64), TrainError> {
        let val_loss = calc_loss(model_config, params, val_set)?;
        let mut wer_sum = 0.0;
        for item in val_set {
            let hyp = predict(model_config, params, &item.features)?;
            wer_sum += crate::eval::wer(&item.transcript, &hyp).wer_percent;
        }
        Ok((val_loss, wer_sum / val_set.len() as f64))
    }
}

/// Everything a finished session returns: the best-epoch parameters, the
/// full metric history, and which epoch won.
pub struct SessionOutput {
    pub params: ParamSet,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

/// Runs a full personalization session from a checkpoint: per epoch, a
/// seeded shuffle, batched training steps, evaluation, a quantized
/// checkpoint save, and the stopping rule. Returns the best-epoch
/// checkpoint's parameters. Per-epoch metrics are appended to
/// `session_dir/metrics.jsonl`.
pub fn run_personalization(
    model_config: &ModelConfig,
    initial_checkpoint: &Path,
    train_set: &[TrainItem],
    val_set: &[TrainItem],
    config: &TrainingConfig,
    session_dir: &Path,
) -> Result<SessionOutput, TrainError> {
    run_personalization_with(
        model_config,
        initial_checkpoint,
        train_set,
        val_set,
        config,
        session_dir,
        &mut CtcWerEvaluator,
    )
}

/// `run_personalization` with an injectable evaluator.
pub fn run_personalization_with(
    model_config: &ModelConfig,
    initial_checkpoint: &Path,
    train_set: &[TrainItem],
    val_set: &[TrainItem],
    config: &TrainingConfig,
    session_dir: &Path,
    evaluator: &mut dyn EpochEvaluator,
) -> Result<SessionOutput, TrainError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| TrainError::Io {
            path: path.clone(),
            source,
        }
    };
    std::fs::create_dir_all(session_dir).map_err(io_err(session_dir))?;

    let mut params = load_checkpoint(initial_checkpoint, model_config)?;
    let mut adam = AdamState::new();
    let mut stop = StopState::new();

    let metrics_path = session_dir.join("metrics.jsonl");
    let mut metrics_file =
        std::fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;

    let ckpt_path = |epoch: usize| session_dir.join(format!("epoch_{epoch:03}.ckpt"));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best_epoch = 1;

    for epoch in 1..=config.max_epochs {
        let (epoch_result, wall_time_s) = profiler::time_epoch(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
            order.shuffle(&mut rng);

            // The last short batch still trains; no data is dropped.
            let mut loss_sum = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &train_set[i]).collect();
                let mean = train_step(model_config, &mut params, &batch, &mut adam, config)?;
                loss_sum += mean * batch.len() as f64;
            }
            let mean_train_loss = loss_sum / train_set.len() as f64;
            let (val_loss, val_wer) = evaluator.evaluate(model_config, &params, val_set)?;
            Ok::<_, TrainError>((mean_train_loss, val_loss, val_wer))
        });
        let (mean_train_loss, val_loss, val_wer) = epoch_result?;
        let metrics = EpochMetrics {
            epoch,
            mean_train_loss,
            val_loss,
            val_wer,
            wall_time_s,
            peak_mem_bytes: profiler::peak_rss_bytes(),
        };

        save_checkpoint(&params, model_config, &ckpt_path(epoch))?;
        let line = serde_json::to_string(&metrics).expect("metrics serialize");
        writeln!(metrics_file, "{line}").map_err(io_err(&metrics_path))?;
        metrics_file.flush().map_err(io_err(&metrics_path))?;

        match stop.observe(metrics) {
            StopDecision::Continue | StopDecision::GraceEpoch => {
                best_epoch = stop.best_epoch().expect("history is nonempty");
            }
            StopDecision::Stop { best_epoch: best } => {
                best_epoch = best;
                break;
            }
        }
    }

    let params = load_checkpoint(&ckpt_path(best_epoch), model_config)?;
    Ok(SessionOutput {
        params,
        history: stop.into_history(),
        best_epoch,
    })
}
