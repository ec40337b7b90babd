//! Run configuration file: one document holding the model, training, synth,
//! and sweep settings plus the cache root. Unknown keys are rejected.

use crate::CliError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use stt_core::model::ModelConfig;
use stt_core::profiler::SweepGrid;
use stt_core::synth::SynthSpec;
use stt_core::trainer::TrainingConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub synth: SynthSpec,
    pub sweep: SweepGrid,
    pub cache_root: Option<PathBuf>,
}

impl RunConfig {
    /// Forces one seed across every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.training.seed = seed;
        self.synth.seed = seed;
        self.sweep.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.training
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Loads TOML (default) or JSON (by extension). A missing `--config` means
/// all defaults.
pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?
    } else {
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?
    };
    config.validate()?;
    Ok(config)
}
