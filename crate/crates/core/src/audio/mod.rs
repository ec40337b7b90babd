//! Audio frontend: PCM buffers, WAV I/O, log-mel features, noise augmentation.

mod features;
mod noise;
mod wav;

pub use features::{frame_signal, log_mel, num_frames, FeatureMatrix, HOP, MEL_BINS, WINDOW};
pub use noise::augment_noise;
pub use wav::{read_wav, write_wav};

use thiserror::Error;

/// Fixed sample rate for the whole pipeline. Other rates are rejected
/// rather than resampled.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio too short: {samples} samples, need at least {WINDOW} for one window")]
    TooShort { samples: usize },
    #[error("signal power is zero; SNR is undefined for a silent signal")]
    SilentSignal,
    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },
    #[error("unsupported sample rate {got} Hz, expected {SAMPLE_RATE} Hz")]
    UnsupportedSampleRate { got: u32 },
    #[error("unsupported channel count {got}, expected mono (1 channel)")]
    UnsupportedChannels { got: u16 },
    #[error("unsupported bit depth {got}, expected 16-bit PCM")]
    UnsupportedBitDepth { got: u16 },
    #[error("unsupported sample format {got}, expected integer PCM")]
    UnsupportedFormat { got: String },
    #[error("failed to read WAV {path}: {source}")]
    WavRead {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("failed to write WAV {path}: {source}")]
    WavWrite {
        path: String,
        #[source]
        source: hound::Error,
    },
}

/// Raw mono audio at 16 kHz, samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Wraps samples after validating the frontend invariants.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate != SAMPLE_RATE {
            return Err(AudioError::UnsupportedSampleRate { got: sample_rate });
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFiniteSample { index });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}
