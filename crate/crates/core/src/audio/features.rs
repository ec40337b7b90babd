//! Framing and 80-bin log-mel feature extraction.
//!
//! 32 ms Hann windows with 50% overlap (512/256 samples at 16 kHz), 512-point
//! FFT, HTK-style triangular mel filterbank over 0-8000 Hz, natural log with a
//! 1e-10 floor. No per-utterance normalization.

use super::{AudioBuffer, AudioError};
use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

/// Window length in samples (32 ms at 16 kHz).
pub const WINDOW: usize = 512;
/// Hop between window starts (50% overlap).
pub const HOP: usize = 256;
/// Number of mel filters.
pub const MEL_BINS: usize = 80;
/// Floor added to filterbank energies before the log.
const LOG_FLOOR: f64 = 1e-10;

const FFT_BINS: usize = WINDOW / 2 + 1;

/// T x 80 matrix of log-mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: Array2<f64>,
}

impl FeatureMatrix {
    pub(crate) fn from_frames(frames: Array2<f64>) -> Self {
        debug_assert_eq!(frames.ncols(), MEL_BINS);
        Self { frames }
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }
}

/// Number of full windows in a signal of `samples` length.
pub fn num_frames(samples: usize) -> Result<usize, AudioError> {
    if samples < WINDOW {
        return Err(AudioError::TooShort { samples });
    }
    Ok((samples - WINDOW) / HOP + 1)
}

/// Splits the signal into full 512-sample windows starting every 256 samples.
/// The last partial window is dropped.
pub fn frame_signal(audio: &AudioBuffer) -> Result<Vec<&[f64]>, AudioError> {
    let n = num_frames(audio.len())?;
    let samples = audio.samples();
    Ok((0..n).map(|t| &samples[t * HOP..t * HOP + WINDOW]).collect())
}

fn hann_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    for (n, v) in w.iter_mut().enumerate() {
        *v = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos();
    }
    w
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank, MEL_BINS x FFT_BINS, peak weight 1.
fn mel_filterbank(sample_rate: u32) -> Array2<f64> {
    let fmax = sample_rate as f64 / 2.0;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(fmax);
    let step = (mel_hi - mel_lo) / (MEL_BINS + 1) as f64;
    let edges: Vec<f64> = (0..MEL_BINS + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();

    let mut fb = Array2::zeros((MEL_BINS, FFT_BINS));
    for i in 0..MEL_BINS {
        let (lo, center, hi) = (edges[i], edges[i + 1], edges[i + 2]);
        for k in 0..FFT_BINS {
            let f = k as f64 * sample_rate as f64 / WINDOW as f64;
            let w = if f >= lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[[i, k]] = w;
        }
    }
    fb
}

/// Extracts the T x 80 log-mel feature matrix.
pub fn log_mel(audio: &AudioBuffer) -> Result<FeatureMatrix, AudioError> {
    let frames = frame_signal(audio)?;
    let hann = hann_window();
    let fb = mel_filterbank(audio.sample_rate());

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(WINDOW);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];

    let mut out = Array2::zeros((frames.len(), MEL_BINS));
    let mut buf = vec![Complex::default(); WINDOW];
    for (t, frame) in frames.iter().enumerate() {
        for (i, (&s, &w)) in frame.iter().zip(hann.iter()).enumerate() {
            buf[i] = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let power: Vec<f64> = buf[..FFT_BINS].iter().map(|c| c.norm_sqr()).collect();
        for m in 0..MEL_BINS {
            let energy: f64 = (0..FFT_BINS).map(|k| fb[[m, k]] * power[k]).sum();
            out[[t, m]] = (energy + LOG_FLOOR).ln();
        }
    }
    Ok(FeatureMatrix::from_frames(out))
}
