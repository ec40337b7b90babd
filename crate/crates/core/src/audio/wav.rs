//! WAV ingest and emit: RIFF, PCM16, mono, 16 kHz, little-endian only.

use super::{AudioBuffer, AudioError, SAMPLE_RATE};
use std::path::Path;

/// Reads a WAV file, rejecting anything that is not 16 kHz mono PCM16 with a
/// diagnostic naming the offending property.
pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|source| AudioError::WavRead {
        path: path.display().to_string(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedChannels { got: spec.channels });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedSampleRate {
            got: spec.sample_rate,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(AudioError::UnsupportedFormat {
            got: format!("{:?}", spec.sample_format),
        });
    }
    if spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedBitDepth {
            got: spec.bits_per_sample,
        });
    }

    let samples: Result<Vec<i16>, _> = reader.into_samples().collect();
    let samples = samples.map_err(|source| AudioError::WavRead {
        path: path.display().to_string(),
        source,
    })?;
    let scaled = samples.into_iter().map(|s| s as f64 / 32768.0).collect();
    AudioBuffer::new(scaled, SAMPLE_RATE)
}

/// Writes an AudioBuffer as 16 kHz mono PCM16.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |source| AudioError::WavWrite {
        path: path.display().to_string(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in audio.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)?;
    Ok(())
}
