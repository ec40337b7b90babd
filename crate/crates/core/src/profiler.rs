//! Wall-time and peak-memory measurement plus the hyperparameter sweep
//! harness that reproduces the batch-size/learning-rate/freeze experiment
//! structure on local data.

use crate::data::TrainItem;
use crate::model::{FreezeSpec, ModelConfig};
use crate::trainer::{run_personalization, TrainingConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("sweep grid has an empty axis")]
    EmptyGrid,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to encode sweep table: {0}")]
    Encode(String),
}

/// Reads one field of /proc/self/status, in bytes. Returns 0 where /proc is
/// unavailable; the numbers are advisory, never asserted against absolutes.
fn proc_status_bytes(key: &str) -> u64 {
    let Ok(text) = std::fs::read_to_string("/proc/self/status") else {
        return 0;
    };
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(key) {
            let kb: u64 = rest
                .trim_start_matches(':')
                .trim()
                .trim_end_matches("kB")
                .trim()
                .parse()
                .unwrap_or(0);
            return kb * 1024;
        }
    }
    0
}

/// Current resident set size of this process.
pub fn current_rss_bytes() -> u64 {
    proc_status_bytes("VmRSS")
}

/// Peak resident set size (high-water mark) of this process.
pub fn peak_rss_bytes() -> u64 {
    proc_status_bytes("VmHWM")
}

/// Times one epoch-shaped unit of work on the monotonic clock.
pub fn time_epoch<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let started = Instant::now();
    let out = f();
    (out, started.elapsed().as_secs_f64())
}

/// Background thread sampling the process RSS while a measured run executes.
/// The first sample lands before the run starts, so the reported peak is
/// never below the baseline footprint.
pub struct MemorySampler {
    stop: Arc<AtomicBool>,
    peak: Arc<AtomicU64>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MemorySampler {
    /// Starts sampling at 10 Hz.
    pub fn start() -> Self {
        Self::with_interval(Duration::from_millis(100))
    }

    pub fn with_interval(interval: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let peak = Arc::new(AtomicU64::new(current_rss_bytes()));
        let stop_flag = Arc::clone(&stop);
        let peak_cell = Arc::clone(&peak);
        let handle = std::thread::spawn(move || {
            while !stop_flag.load(Ordering::Relaxed) {
                peak_cell.fetch_max(current_rss_bytes(), Ordering::Relaxed);
                std::thread::park_timeout(interval);
            }
        });
        Self {
            stop,
            peak,
            handle: Some(handle),
        }
    }

    /// Stops the sampler and returns the peak RSS observed, in bytes.
    pub fn stop(mut self) -> u64 {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            handle.thread().unpark();
            let _ = handle.join();
        }
        self.peak
            .fetch_max(current_rss_bytes(), Ordering::Relaxed)
            .max(current_rss_bytes())
    }
}

impl Drop for MemorySampler {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            handle.thread().unpark();
            let _ = handle.join();
        }
    }
}

/// Axes of the sweep. The cartesian product runs sequentially so timing
/// cells stay uncontaminated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub freezes: Vec<FreezeSpec>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 2, 5, 10],
            learning_rates: vec![1e-5, 1e-6],
            freezes: vec![
                FreezeSpec::NO_FROZEN,
                FreezeSpec::FROZEN_CONV,
                FreezeSpec::FROZEN_CONV_BLSTM,
            ],
            repetitions: 1,
            seed: 0,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.batch_sizes.is_empty()
            || self.learning_rates.is_empty()
            || self.freezes.is_empty()
            || self.repetitions == 0
            || self.batch_sizes.iter().any(|&b| b == 0)
            || self.learning_rates.iter().any(|&lr| !(lr > 0.0))
        {
            return Err(ProfileError::EmptyGrid);
        }
        Ok(())
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch: usize,
    pub lr: f64,
    pub freeze: String,
    pub epochs: usize,
    pub final_wer: f64,
    pub mean_epoch_s: f64,
    pub peak_mem_bytes: u64,
    pub status: String,
}

/// Everything a profiled run needs besides the cell's hyperparameters.
pub struct SweepData<'a> {
    pub model: &'a ModelConfig,
    pub baseline_checkpoint: &'a Path,
    pub train: &'a [TrainItem],
    pub val: &'a [TrainItem],
    /// Template for per-cell TrainingConfig; batch/lr/freeze/seed overwritten.
    pub base_config: &'a TrainingConfig,
    /// Session scratch directory for per-epoch checkpoints.
    pub work_dir: &'a Path,
}

/// Runs one cell under the memory sampler and epoch timing.
pub fn profile_run(
    batch: usize,
    lr: f64,
    freeze: FreezeSpec,
    seed: u64,
    data: &SweepData<'_>,
) -> SweepRow {
    let config = TrainingConfig {
        batch_size: batch,
        learning_rate: lr,
        freeze,
        seed,
        ..data.base_config.clone()
    };
    let session = data
        .work_dir
        .join(format!("b{batch}_lr{lr:e}_{freeze}_s{seed}"));
    let sampler = MemorySampler::start();
    let outcome = run_personalization(
        data.model,
        data.baseline_checkpoint,
        data.train,
        data.val,
        &config,
        &session,
    );
    let peak = sampler.stop();
    match outcome {
        Ok(out) => {
            let epochs = out.history.len();
            let mean_epoch_s =
                out.history.iter().map(|m| m.wall_time_s).sum::<f64>() / epochs.max(1) as f64;
            let final_wer = out.history[out.best_epoch - 1].val_wer;
            SweepRow {
                batch,
                lr,
                freeze: freeze.to_string(),
                epochs,
                final_wer,
                mean_epoch_s,
                peak_mem_bytes: peak,
                status: "ok".into(),
            }
        }
        Err(e) => SweepRow {
            batch,
            lr,
            freeze: freeze.to_string(),
            epochs: 0,
            final_wer: f64::NAN,
            mean_epoch_s: f64::NAN,
            peak_mem_bytes: peak,
            status: format!("error: {e}"),
        },
    }
}

/// Executes the full grid sequentially and writes `sweep.csv` plus
/// `sweep.json` under `out_dir`. Cell failures are recorded in-row and the
/// sweep continues. Accuracy columns are seed-deterministic; timing columns
/// are averaged over `repetitions` and remain advisory.
pub fn run_sweep(
    grid: &SweepGrid,
    data: &SweepData<'_>,
    out_dir: &Path,
) -> Result<Vec<SweepRow>, ProfileError> {
    grid.validate()?;
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| ProfileError::Io {
            path: path.clone(),
            source,
        }
    };
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut cells: Vec<(usize, f64, FreezeSpec)> = Vec::new();
    for &batch in &grid.batch_sizes {
        for &lr in &grid.learning_rates {
            for &freeze in &grid.freezes {
                cells.push((batch, lr, freeze));
            }
        }
    }
    cells.sort_by(|a, b| {
        (a.0, a.1, a.2.to_string())
            .partial_cmp(&(b.0, b.1, b.2.to_string()))
            .expect("finite learning rates")
    });

    let mut rows = Vec::with_capacity(cells.len());
    for (batch, lr, freeze) in cells {
        let mut reps = Vec::with_capacity(grid.repetitions);
        for _ in 0..grid.repetitions {
            reps.push(profile_run(batch, lr, freeze, grid.seed, &data));
        }
        // Same seed per repetition: accuracy columns are identical, timing
        // averages over repetitions.
        let mut row = reps[0].clone();
        if row.status == "ok" {
            row.mean_epoch_s =
                reps.iter().map(|r| r.mean_epoch_s).sum::<f64>() / reps.len() as f64;
            row.peak_mem_bytes = reps.iter().map(|r| r.peak_mem_bytes).max().unwrap_or(0);
        }
        rows.push(row);
    }

    let csv_path = out_dir.join("sweep.csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| ProfileError::Io {
        path: csv_path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    for row in &rows {
        writer
            .serialize(row)
            .map_err(|e| ProfileError::Encode(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(io_err(&csv_path))?;

    let json_path = out_dir.join("sweep.json");
    let json = serde_json::to_string_pretty(&rows).map_err(|e| ProfileError::Encode(e.to_string()))?;
    std::fs::write(&json_path, json).map_err(io_err(&json_path))?;

    Ok(rows)
}
