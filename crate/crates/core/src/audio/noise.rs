//! Additive white Gaussian noise at a requested SNR.

use super::{AudioBuffer, AudioError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Adds white Gaussian noise so that 10*log10(P_signal/P_noise) equals
/// `snr_db`. The noise is scaled against its own empirical power, so the
/// achieved SNR matches the request up to float rounding.
///
/// `snr_db = +inf` is the "clean" sentinel and returns the input unchanged.
/// Samples are clamped to [-1, 1] afterwards; inputs with reasonable
/// headroom are unaffected by the clamp.
pub fn augment_noise(
    audio: &AudioBuffer,
    snr_db: f64,
    seed: u64,
) -> Result<AudioBuffer, AudioError> {
    if snr_db == f64::INFINITY {
        return Ok(audio.clone());
    }
    let p_signal = audio.power();
    if p_signal == 0.0 {
        return Err(AudioError::SilentSignal);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let noise: Vec<f64> = (0..audio.len()).map(|_| normal.sample(&mut rng)).collect();
    let p_noise_raw = noise.iter().map(|n| n * n).sum::<f64>() / noise.len() as f64;

    let p_target = p_signal / 10f64.powf(snr_db / 10.0);
    let scale = (p_target / p_noise_raw).sqrt();

    let samples = audio
        .samples()
        .iter()
        .zip(noise.iter())
        .map(|(&s, &n)| (s + scale * n).clamp(-1.0, 1.0))
        .collect();
    AudioBuffer::new(samples, audio.sample_rate())
}
