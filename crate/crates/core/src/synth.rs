//! Parametric synthetic speech: each character maps to a fixed tone, each
//! voice carries its own frequency offset and harmonic mix, so transcripts
//! are recoverable by construction and "accents" are real spectral shifts a
//! personalization run can adapt to.

use crate::alphabet;
use crate::audio::{write_wav, AudioBuffer, AudioError, SAMPLE_RATE};
use crate::data::ManifestEntry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("voices must be >= 1")]
    NoVoices,
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Knobs of the synthetic corpus. Defaults target utterances of roughly 135
/// characters and 7 seconds, mirroring the cache-scale data the trainer
/// expects.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub voices: usize,
    pub utterances_per_voice: usize,
    pub seed: u64,
    /// Inclusive range of words per utterance.
    pub words_per_utterance: (usize, usize),
    /// Inclusive range of word lengths.
    pub word_len: (usize, usize),
    pub char_duration_s: f64,
    /// Tone of character 0 for a voice with zero offset.
    pub base_freq_hz: f64,
    /// Frequency distance between adjacent characters.
    pub char_spacing_hz: f64,
    /// Extra frequency shift per voice index (the synthetic "accent").
    pub voice_offset_hz: f64,
    /// Overall strength of the per-voice overtones. Overtones of one
    /// character land near other characters' fundamentals, so this sets how
    /// much timbre confusability the corpus carries.
    pub harmonic_scale: f64,
    pub amplitude: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            voices: 7,
            utterances_per_voice: 70,
            seed: 0,
            words_per_utterance: (24, 30),
            word_len: (2, 6),
            char_duration_s: 0.052,
            base_freq_hz: 300.0,
            char_spacing_hz: 55.0,
            voice_offset_hz: 25.0,
            harmonic_scale: 0.3,
            amplitude: 0.3,
        }
    }
}

impl SynthSpec {
    /// Tone frequency of a character for a given voice (1-based).
    pub fn char_freq(&self, voice: usize, symbol: usize) -> f64 {
        self.base_freq_hz
            + self.char_spacing_hz * symbol as f64
            + self.voice_offset_hz * (voice - 1) as f64
    }

    /// Harmonic amplitudes giving each voice its timbre.
    fn harmonics(&self, voice: usize) -> (f64, f64) {
        (
            self.harmonic_scale * (0.5 + 0.17 * (voice % 4) as f64),
            self.harmonic_scale * (0.17 + 0.1 * (voice % 3) as f64),
        )
    }
}

/// Draws a transcript of space-separated pseudo-words. Adjacent repeated
/// letters are avoided so every transcript has a representable greedy path.
pub fn generate_transcript(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> String {
    let words = rng.gen_range(spec.words_per_utterance.0..=spec.words_per_utterance.1);
    let mut out = String::new();
    for w in 0..words {
        if w > 0 {
            out.push(' ');
        }
        let len = rng.gen_range(spec.word_len.0..=spec.word_len.1);
        let mut prev = usize::MAX;
        for _ in 0..len {
            let mut c = rng.gen_range(0..26usize);
            if c == prev {
                c = (c + 1) % 26;
            }
            out.push(alphabet::index_to_char(c));
            prev = c;
        }
    }
    out
}

/// Renders a transcript as audio for one voice: per-character tones with a
/// raised-cosine envelope, silence for spaces. Deterministic.
pub fn synthesize_utterance(
    spec: &SynthSpec,
    voice: usize,
    transcript: &str,
) -> Result<AudioBuffer, SynthError> {
    if voice == 0 || spec.voices == 0 {
        return Err(SynthError::NoVoices);
    }
    let sr = SAMPLE_RATE as f64;
    let char_samples = (spec.char_duration_s * sr).round() as usize;
    let ramp = ((0.008 * sr) as usize).min(char_samples / 2);
    let (h2, h3) = spec.harmonics(voice);

    let mut samples = Vec::with_capacity(transcript.chars().count() * char_samples);
    for c in transcript.chars() {
        let Some(symbol) = alphabet::char_to_index(c) else {
            continue;
        };
        if c == ' ' {
            samples.extend(std::iter::repeat(0.0).take(char_samples));
            continue;
        }
        let freq = spec.char_freq(voice, symbol);
        let w = 2.0 * std::f64::consts::PI * freq / sr;
        for n in 0..char_samples {
            let env = if n < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * n as f64 / ramp as f64).cos()
            } else if n + ramp > char_samples {
                let k = char_samples - n;
                0.5 - 0.5 * (std::f64::consts::PI * k as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let t = n as f64;
            let v = (w * t).sin() + h2 * (2.0 * w * t).sin() + h3 * (3.0 * w * t).sin();
            samples.push(spec.amplitude * env * v);
        }
    }
    // Featurization needs at least one full window.
    if samples.len() < crate::audio::WINDOW {
        samples.resize(crate::audio::WINDOW, 0.0);
    }
    Ok(AudioBuffer::new(samples, SAMPLE_RATE)?)
}

/// Where a generated corpus landed: the combined manifest plus one manifest
/// per voice.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub voice_manifests: Vec<PathBuf>,
    pub entries: usize,
}

/// Generates `voices x utterances_per_voice` WAV/transcript pairs under
/// `out_dir`, writing `manifest.jsonl` plus `manifest_voice{v}.jsonl`.
/// Byte-identical for identical (spec, seed).
pub fn generate_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput, SynthError> {
    if spec.voices == 0 {
        return Err(SynthError::NoVoices);
    }
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io {
            path: path.clone(),
            source,
        }
    };
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let manifest_path = out_dir.join("manifest.jsonl");
    let mut manifest = std::fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut voice_manifests = Vec::with_capacity(spec.voices);
    let mut entries = 0usize;

    for voice in 1..=spec.voices {
        let voice_dir = out_dir.join(format!("voice{voice}"));
        std::fs::create_dir_all(&voice_dir).map_err(io_err(&voice_dir))?;
        let vm_path = out_dir.join(format!("manifest_voice{voice}.jsonl"));
        let mut vm = std::fs::File::create(&vm_path).map_err(io_err(&vm_path))?;

        for u in 0..spec.utterances_per_voice {
            let text = generate_transcript(spec, &mut rng);
            let audio = synthesize_utterance(spec, voice, &text)?;
            let rel = PathBuf::from(format!("voice{voice}")).join(format!("utt{u:04}.wav"));
            write_wav(&out_dir.join(&rel), &audio)?;
            let entry = ManifestEntry { audio: rel, text };
            let line = serde_json::to_string(&entry).expect("manifest entry serializes");
            writeln!(manifest, "{line}").map_err(io_err(&manifest_path))?;
            writeln!(vm, "{line}").map_err(io_err(&vm_path))?;
            entries += 1;
        }
        voice_manifests.push(vm_path);
    }

    Ok(SynthOutput {
        manifest: manifest_path,
        voice_manifests,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::log_mel;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            voices: 2,
            utterances_per_voice: 3,
            words_per_utterance: (2, 3),
            word_len: (2, 4),
            ..SynthSpec::default()
        }
    }

    #[test]
    fn corpus_has_expected_manifest_lines() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_corpus(&small_spec(), dir.path()).unwrap();
        assert_eq!(out.entries, 6);
        let text = std::fs::read_to_string(&out.manifest).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(out.voice_manifests.len(), 2);
        for vm in &out.voice_manifests {
            assert_eq!(std::fs::read_to_string(vm).unwrap().lines().count(), 3);
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_corpus(&small_spec(), d1.path()).unwrap();
        generate_corpus(&small_spec(), d2.path()).unwrap();
        let a = std::fs::read(d1.path().join("voice1/utt0000.wav")).unwrap();
        let b = std::fs::read(d2.path().join("voice1/utt0000.wav")).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            std::fs::read_to_string(d1.path().join("manifest.jsonl")).unwrap(),
            std::fs::read_to_string(d2.path().join("manifest.jsonl")).unwrap()
        );
    }

    #[test]
    fn transcripts_stay_inside_the_alphabet() {
        let spec = SynthSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t = generate_transcript(&spec, &mut rng);
            assert!(alphabet::encode(&t).is_ok(), "bad transcript {t:?}");
            assert!(!t.contains("  "));
        }
    }

    #[test]
    fn default_durations_center_near_seven_seconds() {
        let spec = SynthSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut total = 0.0;
        let n = 30;
        for _ in 0..n {
            let t = generate_transcript(&spec, &mut rng);
            total += t.chars().count() as f64 * spec.char_duration_s;
        }
        let mean = total / n as f64;
        assert!((5.0..=9.0).contains(&mean), "mean duration {mean}");
    }

    #[test]
    fn tones_are_recoverable_from_features() {
        // Decode each character segment by picking the mel bin with maximum
        // energy and matching it against the char's expected dominant bin.
        let spec = SynthSpec::default();
        let voice = 1;
        let text = "cab";
        let audio = synthesize_utterance(&spec, voice, text).unwrap();
        let feats = log_mel(&audio).unwrap();

        let frames_per_char = spec.char_duration_s / 0.016;
        let expected_bin = |symbol: usize| -> usize {
            let tone = synthesize_utterance(
                &spec,
                voice,
                &alphabet::index_to_char(symbol).to_string().repeat(8),
            )
            .unwrap();
            let f = log_mel(&tone).unwrap();
            let row = f.frames().row(f.num_frames() / 2);
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };

        for (i, c) in text.chars().enumerate() {
            let sym = alphabet::char_to_index(c).unwrap();
            let mid_frame = ((i as f64 + 0.5) * frames_per_char) as usize;
            if mid_frame >= feats.num_frames() {
                continue;
            }
            let row = feats.frames().row(mid_frame);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0 as i64;
            // Envelope modulation can tilt leakage between the two bins
            // bracketing the tone, so allow one bin of slack.
            let expected = expected_bin(sym) as i64;
            assert!(
                (argmax - expected).abs() <= 1,
                "char {c} at segment {i}: bin {argmax} vs expected {expected}"
            );
        }
    }
}
