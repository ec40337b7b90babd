//! Word-level edit distance, WER, and per-set evaluation reports.

use crate::data::TrainItem;
use crate::model::{ModelConfig, ParamSet};
use crate::trainer::{self, TrainError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Alignment counts behind a WER figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
    pub wer_percent: f64,
}

impl WerBreakdown {
    fn from_counts(substitutions: usize, deletions: usize, insertions: usize, ref_words: usize) -> Self {
        let edits = (substitutions + deletions + insertions) as f64;
        WerBreakdown {
            substitutions,
            deletions,
            insertions,
            ref_words,
            wer_percent: 100.0 * edits / ref_words.max(1) as f64,
        }
    }

    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Splits on whitespace runs; inputs are assumed already normalized.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Minimal-cost word alignment with unit costs. Among equal-cost alignments
/// the tie-break prefers fewer insertions, then fewer deletions.
pub fn edit_distance_words(reference: &[&str], hypothesis: &[&str]) -> WerBreakdown {
    let n = reference.len();
    let m = hypothesis.len();
    // DP over (cost, insertions, deletions), compared lexicographically.
    let mut dp = vec![vec![(0usize, 0usize, 0usize); m + 1]; n + 1];
    for i in 1..=n {
        dp[i][0] = (i, 0, i);
    }
    for j in 1..=m {
        dp[0][j] = (j, j, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let (c, ins, del) = dp[i - 1][j - 1];
            let diag = (c + sub_cost, ins, del);
            let (c, ins, del) = dp[i - 1][j];
            let delete = (c + 1, ins, del + 1);
            let (c, ins, del) = dp[i][j - 1];
            let insert = (c + 1, ins + 1, del);
            dp[i][j] = diag.min(delete).min(insert);
        }
    }
    let (cost, insertions, deletions) = dp[n][m];
    let substitutions = cost - insertions - deletions;
    WerBreakdown::from_counts(substitutions, deletions, insertions, n)
}

/// WER between two transcripts, in percent.
pub fn wer(reference: &str, hypothesis: &str) -> WerBreakdown {
    edit_distance_words(&tokenize(reference), &tokenize(hypothesis))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub r#ref: String,
    pub hyp: String,
    pub wer: f64,
}

/// Per-utterance WERs plus aggregates. `mean_wer` is the unweighted mean
/// over utterances; `word_weighted_wer` weights by reference length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<EvalItem>,
    pub mean_wer: f64,
    pub word_weighted_wer: f64,
    pub mean_loss: f64,
}

/// Runs prediction over a set and aggregates WER and CTC loss.
pub fn evaluate_set(
    config: &ModelConfig,
    params: &ParamSet,
    items: &[TrainItem],
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut report_items = Vec::with_capacity(items.len());
    let mut total_edits = 0usize;
    let mut total_words = 0usize;
    for item in items {
        let hyp = trainer::predict(config, params, &item.features)?;
        let breakdown = wer(&item.transcript, &hyp);
        total_edits += breakdown.edits();
        total_words += breakdown.ref_words;
        report_items.push(EvalItem {
            id: item.id.clone(),
            r#ref: item.transcript.clone(),
            hyp,
            wer: breakdown.wer_percent,
        });
    }
    let mean_wer = report_items.iter().map(|i| i.wer).sum::<f64>() / report_items.len() as f64;
    let word_weighted_wer = 100.0 * total_edits as f64 / total_words.max(1) as f64;
    let mean_loss = trainer::calc_loss(config, params, items)?;
    Ok(EvalReport {
        items: report_items,
        mean_wer,
        word_weighted_wer,
        mean_loss,
    })
}
