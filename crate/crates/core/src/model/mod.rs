//! Compact CONV -> BLSTM -> FC acoustic network with named parameter groups.
//!
//! The forward pass produces per-frame logits (softmax lives inside the CTC
//! loss); backpropagation is restricted to unfrozen groups. Convolutions are
//! 2D over (time, mel) with stride 1 and SAME padding, so the logit time
//! length always equals the feature time length. Bidirectional LSTM outputs
//! merge by elementwise sum.

mod backward;
mod conv;
mod forward;
mod lstm;

pub use backward::{backward, Gradients};
pub use forward::{forward, ActivationTape};

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
    #[error("freeze spec leaves no trainable group")]
    NothingTrainable,
}

/// Parameter group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Conv,
    Blstm,
    Fc,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Conv, ParamGroup::Blstm, ParamGroup::Fc];

    pub fn tag(self) -> u8 {
        match self {
            ParamGroup::Conv => 0,
            ParamGroup::Blstm => 1,
            ParamGroup::Fc => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ParamGroup::Conv),
            1 => Some(ParamGroup::Blstm),
            2 => Some(ParamGroup::Fc),
            _ => None,
        }
    }
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamGroup::Conv => write!(f, "conv"),
            ParamGroup::Blstm => write!(f, "blstm"),
            ParamGroup::Fc => write!(f, "fc"),
        }
    }
}

/// One convolutional layer: output channels and (time, mel) kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: (usize, usize),
}

/// Network dimensions. Desk-scale defaults keep the paper's layer topology
/// (3 conv, 4 BLSTM, 2 FC) at sizes a laptop can train.
///
/// `feature_center`/`feature_spread` condition the raw log-mel input as
/// `(x - center) / spread` before the conv stack. Log-mel entries span
/// roughly [ln(1e-10), ~7] and are unusable as network input at that scale;
/// the defaults map that range to about [-1, 1.6]. The transform is a fixed
/// constant, not a per-utterance statistic, so featurization stays bit-exact
/// and reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_layers: Vec<ConvLayer>,
    pub blstm_layers: usize,
    pub blstm_units: usize,
    pub fc_units: usize,
    pub alphabet_size: usize,
    pub input_bins: usize,
    pub feature_center: f64,
    pub feature_spread: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_layers: vec![
                ConvLayer {
                    channels: 8,
                    kernel: (3, 3),
                };
                3
            ],
            blstm_layers: 4,
            blstm_units: 64,
            fc_units: 64,
            alphabet_size: crate::alphabet::ALPHABET_SIZE,
            input_bins: crate::audio::MEL_BINS,
            feature_center: -11.5,
            feature_spread: 11.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_layers.is_empty() {
            return Err(ModelError::InvalidConfig("need at least one conv layer".into()));
        }
        for (i, l) in self.conv_layers.iter().enumerate() {
            if l.channels == 0 {
                return Err(ModelError::InvalidConfig(format!("conv{} has 0 channels", i + 1)));
            }
            if l.kernel.0 == 0 || l.kernel.1 == 0 || l.kernel.0 % 2 == 0 || l.kernel.1 % 2 == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "conv{} kernel {:?} must be odd in both dimensions",
                    i + 1,
                    l.kernel
                )));
            }
        }
        if self.blstm_layers == 0 || self.blstm_units == 0 || self.fc_units == 0 {
            return Err(ModelError::InvalidConfig("layer sizes must be >= 1".into()));
        }
        if self.alphabet_size < 2 {
            return Err(ModelError::InvalidConfig(
                "alphabet needs at least one symbol plus blank".into(),
            ));
        }
        if self.input_bins == 0 {
            return Err(ModelError::InvalidConfig("input_bins must be >= 1".into()));
        }
        if !self.feature_spread.is_finite()
            || self.feature_spread == 0.0
            || !self.feature_center.is_finite()
        {
            return Err(ModelError::InvalidConfig(
                "feature conditioning must be finite with nonzero spread".into(),
            ));
        }
        Ok(())
    }

    /// Feature width the first BLSTM layer sees: last conv channel count
    /// times mel bins.
    pub fn blstm_input_size(&self) -> usize {
        self.conv_layers.last().map(|l| l.channels).unwrap_or(1) * self.input_bins
    }

    /// Input size of BLSTM layer `l` (0-based).
    fn blstm_layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.blstm_input_size()
        } else {
            self.blstm_units
        }
    }

    /// Stable 64-bit fingerprint of the architecture, used to pair
    /// checkpoints with configs. FNV-1a over the field values.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        feed(self.conv_layers.len() as u64);
        for l in &self.conv_layers {
            feed(l.channels as u64);
            feed(l.kernel.0 as u64);
            feed(l.kernel.1 as u64);
        }
        feed(self.blstm_layers as u64);
        feed(self.blstm_units as u64);
        feed(self.fc_units as u64);
        feed(self.alphabet_size as u64);
        feed(self.input_bins as u64);
        feed(self.feature_center.to_bits());
        feed(self.feature_spread.to_bits());
        h
    }
}

/// Which parameter groups are excluded from gradients and updates.
/// Serializes as its preset name ("no_frozen", "frozen_conv", ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeSpec {
    conv: bool,
    blstm: bool,
    fc: bool,
}

impl FreezeSpec {
    pub const NO_FROZEN: FreezeSpec = FreezeSpec {
        conv: false,
        blstm: false,
        fc: false,
    };
    pub const FROZEN_CONV: FreezeSpec = FreezeSpec {
        conv: true,
        blstm: false,
        fc: false,
    };
    pub const FROZEN_CONV_BLSTM: FreezeSpec = FreezeSpec {
        conv: true,
        blstm: true,
        fc: false,
    };

    pub fn from_groups(groups: &[ParamGroup]) -> Result<Self, ModelError> {
        let spec = FreezeSpec {
            conv: groups.contains(&ParamGroup::Conv),
            blstm: groups.contains(&ParamGroup::Blstm),
            fc: groups.contains(&ParamGroup::Fc),
        };
        if spec.conv && spec.blstm && spec.fc {
            return Err(ModelError::NothingTrainable);
        }
        Ok(spec)
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Conv => self.conv,
            ParamGroup::Blstm => self.blstm,
            ParamGroup::Fc => self.fc,
        }
    }
}

impl std::fmt::Display for FreezeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if !self.conv && !self.blstm && !self.fc {
            return write!(f, "no_frozen");
        }
        let mut parts = Vec::new();
        if self.conv {
            parts.push("conv");
        }
        if self.blstm {
            parts.push("blstm");
        }
        if self.fc {
            parts.push("fc");
        }
        write!(f, "frozen_{}", parts.join("_"))
    }
}

impl std::str::FromStr for FreezeSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "no_frozen" {
            return Ok(FreezeSpec::NO_FROZEN);
        }
        let rest = s
            .strip_prefix("frozen_")
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown freeze spec {s:?}")))?;
        let mut groups = Vec::new();
        for part in rest.split('_') {
            groups.push(match part {
                "conv" => ParamGroup::Conv,
                "blstm" => ParamGroup::Blstm,
                "fc" => ParamGroup::Fc,
                other => {
                    return Err(ModelError::InvalidConfig(format!(
                        "unknown parameter group {other:?} in freeze spec {s:?}"
                    )))
                }
            });
        }
        FreezeSpec::from_groups(&groups)
    }
}

impl Serialize for FreezeSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FreezeSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A named tensor and the group it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub group: ParamGroup,
    pub values: ArrayD<f64>,
}

impl NamedTensor {
    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Ordered collection of named tensors. Order is canonical: conv layers,
/// then BLSTM layers (forward direction before reverse), then FC.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<NamedTensor>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn from_tensors(tensors: Vec<NamedTensor>) -> Result<Self, ModelError> {
        let mut by_name = HashMap::with_capacity(tensors.len());
        for (i, t) in tensors.iter().enumerate() {
            if by_name.insert(t.name.clone(), i).is_some() {
                return Err(ModelError::InvalidConfig(format!(
                    "duplicate tensor name {}",
                    t.name
                )));
            }
        }
        Ok(Self { tensors, by_name })
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.by_name.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.by_name.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn group_numel(&self, group: ParamGroup) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.group == group)
            .map(|t| t.numel())
            .sum()
    }

    /// Exact bit equality, distinguishing 0.0 from -0.0 and NaN payloads.
    pub fn bit_identical(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.name == b.name
                    && a.group == b.group
                    && a.values.shape() == b.values.shape()
                    && a.values
                        .iter()
                        .zip(b.values.iter())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Bit equality restricted to one group.
    pub fn group_bit_identical(&self, other: &ParamSet, group: ParamGroup) -> bool {
        let mine: Vec<_> = self.tensors.iter().filter(|t| t.group == group).collect();
        let theirs: Vec<_> = other.tensors.iter().filter(|t| t.group == group).collect();
        mine.len() == theirs.len()
            && mine.iter().zip(&theirs).all(|(a, b)| {
                a.name == b.name
                    && a.values
                        .iter()
                        .zip(b.values.iter())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Parameter counts per group, computed from the config's shape arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub conv: usize,
    pub blstm: usize,
    pub fc: usize,
    pub total: usize,
    pub trainable: usize,
}

impl ParamCount {
    pub fn group(&self, group: ParamGroup) -> usize {
        match group {
            ParamGroup::Conv => self.conv,
            ParamGroup::Blstm => self.blstm,
            ParamGroup::Fc => self.fc,
        }
    }
}

/// Exact integer parameter counts from shape formulas; `trainable` sums the
/// unfrozen groups.
pub fn count_params(config: &ModelConfig, freeze: &FreezeSpec) -> Result<ParamCount, ModelError> {
    config.validate()?;

    let mut conv = 0usize;
    let mut in_c = 1usize;
    for l in &config.conv_layers {
        conv += l.channels * in_c * l.kernel.0 * l.kernel.1 + l.channels;
        in_c = l.channels;
    }

    let u = config.blstm_units;
    let mut blstm = 0usize;
    for l in 0..config.blstm_layers {
        let input = config.blstm_layer_input(l);
        // Per direction: W_ih (4U x I) + W_hh (4U x U) + bias (4U).
        blstm += 2 * (4 * u * input + 4 * u * u + 4 * u);
    }

    let fc = config.blstm_units * config.fc_units
        + config.fc_units
        + config.fc_units * config.alphabet_size
        + config.alphabet_size;

    let total = conv + blstm + fc;
    let mut trainable = 0;
    if !freeze.is_frozen(ParamGroup::Conv) {
        trainable += conv;
    }
    if !freeze.is_frozen(ParamGroup::Blstm) {
        trainable += blstm;
    }
    if !freeze.is_frozen(ParamGroup::Fc) {
        trainable += fc;
    }

    Ok(ParamCount {
        conv,
        blstm,
        fc,
        total,
        trainable,
    })
}

/// Canonical tensor layout for a config: name, group, shape, and the fan-in
/// used for initialization (`None` marks a zero-initialized bias).
pub(crate) struct TensorSpec {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub fan_in: Option<usize>,
}

pub(crate) fn tensor_layout(config: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, group: ParamGroup, shape: Vec<usize>, fan_in: Option<usize>| {
        specs.push(TensorSpec {
            name,
            group,
            shape,
            fan_in,
        });
    };

    let mut in_c = 1usize;
    for (i, l) in config.conv_layers.iter().enumerate() {
        let name = format!("conv{}", i + 1);
        push(
            format!("{name}.w"),
            ParamGroup::Conv,
            vec![l.channels, in_c, l.kernel.0, l.kernel.1],
            Some(in_c * l.kernel.0 * l.kernel.1),
        );
        push(format!("{name}.b"), ParamGroup::Conv, vec![l.channels], None);
        in_c = l.channels;
    }

    let u = config.blstm_units;
    for l in 0..config.blstm_layers {
        let input = config.blstm_layer_input(l);
        for dir in ["f", "r"] {
            let name = format!("blstm{}.{dir}", l + 1);
            push(
                format!("{name}.w_ih"),
                ParamGroup::Blstm,
                vec![4 * u, input],
                Some(input),
            );
            push(
                format!("{name}.w_hh"),
                ParamGroup::Blstm,
                vec![4 * u, u],
                Some(u),
            );
            push(format!("{name}.b"), ParamGroup::Blstm, vec![4 * u], None);
        }
    }

    push(
        "fc1.w".into(),
        ParamGroup::Fc,
        vec![config.blstm_units, config.fc_units],
        Some(config.blstm_units),
    );
    push("fc1.b".into(), ParamGroup::Fc, vec![config.fc_units], None);
    push(
        "fc2.w".into(),
        ParamGroup::Fc,
        vec![config.fc_units, config.alphabet_size],
        Some(config.fc_units),
    );
    push("fc2.b".into(), ParamGroup::Fc, vec![config.alphabet_size], None);
    specs
}

/// Builds a fresh ParamSet: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
/// biases zero. Deterministic for a given (config, seed).
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ParamSet, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = tensor_layout(config)
        .into_iter()
        .map(|spec| {
            let values = match spec.fan_in {
                Some(fan_in) => {
                    let k = 1.0 / (fan_in as f64).sqrt();
                    let n: usize = spec.shape.iter().product();
                    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-k..k)).collect();
                    ArrayD::from_shape_vec(IxDyn(&spec.shape), data).expect("shape matches data")
                }
                None => ArrayD::zeros(IxDyn(&spec.shape)),
            };
            NamedTensor {
                name: spec.name,
                group: spec.group,
                values,
            }
        })
        .collect();
    ParamSet::from_tensors(tensors)
}
