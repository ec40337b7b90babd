//! Featurized training items and manifest loading.

use crate::audio::{log_mel, read_wav, AudioError};
use crate::cache::{normalize_transcript, CacheError, Utterance};
use crate::ctc::{CtcError, LabelSequence};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error("manifest {path} line {line}: {detail}")]
    BadManifest {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One utterance ready for the model: features plus its encoded label.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub features: Array2<f64>,
    pub label: LabelSequence,
    pub transcript: String,
}

impl TrainItem {
    /// Builds an item by featurizing a WAV and encoding its transcript.
    pub fn from_audio_file(id: &str, wav: &Path, transcript: &str) -> Result<Self, DataError> {
        let audio = read_wav(wav)?;
        let features = log_mel(&audio)?;
        let transcript = normalize_transcript(transcript)?;
        let label = LabelSequence::from_text(&transcript)?;
        Ok(TrainItem {
            id: id.to_string(),
            features: features.frames().clone(),
            label,
            transcript,
        })
    }
}

/// One line of a dataset manifest: `{"audio": path, "text": string}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub text: String,
}

/// Reads a JSONL manifest. Relative audio paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| DataError::BadManifest {
                path: path.display().to_string(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        if entry.audio.is_relative() {
            entry.audio = base.join(&entry.audio);
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Featurizes every manifest entry.
pub fn load_items(manifest: &Path) -> Result<Vec<TrainItem>, DataError> {
    load_manifest(manifest)?
        .iter()
        .enumerate()
        .map(|(i, e)| TrainItem::from_audio_file(&format!("item{i:05}"), &e.audio, &e.text))
        .collect()
}

/// Featurizes cached utterances against their cache root.
pub fn items_from_utterances(root: &Path, utts: &[Utterance]) -> Result<Vec<TrainItem>, DataError> {
    utts.iter()
        .map(|u| TrainItem::from_audio_file(&u.id, &root.join(&u.audio), &u.text))
        .collect()
}

/// Seeded split of a featurized set into (train, validation).
pub fn split_validation(
    mut items: Vec<TrainItem>,
    validation_size: usize,
    seed: u64,
) -> Option<(Vec<TrainItem>, Vec<TrainItem>)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if validation_size == 0 || items.len() <= validation_size {
        return None;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let val = items.split_off(items.len() - validation_size);
    Some((items, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, AudioBuffer, SAMPLE_RATE};

    #[test]
    fn manifest_roundtrip_and_featurize() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.1).sin() * 0.3).collect();
        write_wav(&wav, &AudioBuffer::new(samples, SAMPLE_RATE).unwrap()).unwrap();

        let manifest = dir.path().join("manifest.jsonl");
        std::fs::write(&manifest, "{\"audio\": \"a.wav\", \"text\": \"Test Words\"}\n").unwrap();

        let items = load_items(&manifest).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].transcript, "test words");
        assert_eq!(items[0].features.dim(), (61, 80));
        assert_eq!(items[0].label.len(), 10);
    }

    #[test]
    fn bad_manifest_line_is_reported_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        std::fs::write(&manifest, "{\"audio\": \"a.wav\"}\n").unwrap();
        let err = load_manifest(&manifest).unwrap_err();
        assert!(matches!(err, DataError::BadManifest { line: 1, .. }));
    }
}
