//! Desk-scale on-device speech-to-text personalization: log-mel frontend,
//! a compact CONV/BLSTM/FC CTC acoustic model with freezable parameter
//! groups, int8-quantized checkpoints, a cache-triggered training loop with
//! a grace-epoch stopping rule, WER evaluation, and a resource-profiling
//! sweep harness.

pub mod alphabet;
pub mod audio;
pub mod cache;
pub mod checkpoint;
pub mod ctc;
pub mod data;
pub mod eval;
pub mod model;
pub mod profiler;
pub mod synth;
pub mod trainer;
