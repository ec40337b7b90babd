//! Stopping criterion with a one-epoch grace period.
//!
//! The composite metric is (validation WER, validation loss) compared
//! lexicographically; an epoch improves only if it is strictly better than
//! the best seen. The first non-improvement grants one grace epoch; a second
//! in a row stops training at the remembered best epoch.

use serde::{Deserialize, Serialize};

/// Per-epoch record. Serializes with the metrics-JSONL field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(rename = "train_loss")]
    pub mean_train_loss: f64,
    pub val_loss: f64,
    pub val_wer: f64,
    #[serde(rename = "wall_s")]
    pub wall_time_s: f64,
    #[serde(rename = "peak_mem")]
    pub peak_mem_bytes: u64,
}

impl EpochMetrics {
    fn composite(&self) -> (f64, f64) {
        (self.val_wer, self.val_loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    GraceEpoch,
    Stop { best_epoch: usize },
}

/// Tracks the metric history and the grace state.
#[derive(Debug, Default)]
pub struct StopState {
    history: Vec<EpochMetrics>,
    best: Option<usize>,
    in_grace: bool,
}

impl StopState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn into_history(self) -> Vec<EpochMetrics> {
        self.history
    }

    /// Best epoch (1-based, as recorded in the metrics) seen so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|i| self.history[i].epoch)
    }

    /// Feeds the latest epoch and decides whether training goes on.
    pub fn observe(&mut self, latest: EpochMetrics) -> StopDecision {
        self.history.push(latest);
        let idx = self.history.len() - 1;
        let improved = match self.best {
            None => true,
            Some(best) => self.history[idx].composite() < self.history[best].composite(),
        };
        if improved {
            self.best = Some(idx);
            self.in_grace = false;
            StopDecision::Continue
        } else if self.in_grace {
            StopDecision::Stop {
                best_epoch: self.best_epoch().expect("a best epoch exists"),
            }
        } else {
            self.in_grace = true;
            StopDecision::GraceEpoch
        }
    }
}
