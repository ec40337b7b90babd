//! On-disk utterance cache: accumulates labeled recordings until the trigger
//! count, hands out a train/validation split, and clears itself only after
//! the caller confirms the session completed.
//!
//! Layout: `root/manifest.jsonl` with one `{"id","audio","text","dur_s"}`
//! line per utterance; audio files under `root/audio/`.

use crate::alphabet;
use crate::audio::{read_wav, write_wav, AudioBuffer, AudioError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("transcript contains characters outside the alphabet: {0:?}")]
    BadTranscript(Vec<char>),
    #[error("transcript is empty after normalization")]
    EmptyTranscript,
    #[error("bad audio: {0}")]
    BadAudio(#[from] AudioError),
    #[error("cache not ready: {count} utterances cached, trigger is {trigger}")]
    NotReady { count: usize, trigger: usize },
    #[error("completion token does not match the pending drain")]
    StaleToken,
    #[error("drain of {count} utterances cannot reserve {validation_size} for validation")]
    SplitTooLarge { count: usize, validation_size: usize },
    #[error("cache is corrupt: {0}")]
    Corrupt(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Lowercases, maps common punctuation to spaces, collapses whitespace, and
/// rejects anything left outside the alphabet (digits, diacritics, ...).
pub fn normalize_transcript(raw: &str) -> Result<String, CacheError> {
    const PUNCT: &[char] = &[',', '.', '!', '?', ';', ':', '"', '(', ')', '-'];
    let mut out = String::with_capacity(raw.len());
    let mut offending = Vec::new();
    let mut pending_space = false;
    for c in raw.to_lowercase().chars() {
        if c.is_whitespace() || PUNCT.contains(&c) {
            pending_space = true;
            continue;
        }
        if alphabet::char_to_index(c).is_none() {
            if !offending.contains(&c) {
                offending.push(c);
            }
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    if !offending.is_empty() {
        return Err(CacheError::BadTranscript(offending));
    }
    if out.is_empty() {
        return Err(CacheError::EmptyTranscript);
    }
    Ok(out)
}

/// One cached utterance as recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub audio: PathBuf,
    pub text: String,
    pub dur_s: f64,
}

/// Proof that a drain is pending; handing it back via `confirm` is what
/// deletes the data.
#[derive(Debug)]
pub struct CompletionToken {
    generation: u64,
}

pub struct UtteranceCache {
    root: PathBuf,
    manifest: Vec<Utterance>,
    trigger: usize,
    next_id: u64,
    generation: u64,
    pending_drain: Option<u64>,
}

impl UtteranceCache {
    /// Opens (or creates) a cache rooted at `root` with trigger count `trigger`.
    /// Orphaned audio files from an interrupted add are removed; manifest
    /// entries whose audio is missing are corruption.
    pub fn open(root: &Path, trigger: usize) -> Result<Self, CacheError> {
        assert!(trigger >= 1, "trigger must be >= 1");
        let audio_dir = root.join("audio");
        fs::create_dir_all(&audio_dir).map_err(io_err(&audio_dir))?;

        let manifest_path = root.join("manifest.jsonl");
        let mut manifest = Vec::new();
        if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let utt: Utterance = serde_json::from_str(line).map_err(|e| {
                    CacheError::Corrupt(format!("manifest line {}: {e}", lineno + 1))
                })?;
                if !root.join(&utt.audio).exists() {
                    return Err(CacheError::Corrupt(format!(
                        "manifest entry {} points at missing audio {}",
                        utt.id,
                        utt.audio.display()
                    )));
                }
                manifest.push(utt);
            }
        }

        // Reconcile: audio files not in the manifest are leftovers from a
        // crash between the audio write and the manifest append.
        let known: std::collections::HashSet<PathBuf> =
            manifest.iter().map(|u| root.join(&u.audio)).collect();
        for entry in fs::read_dir(&audio_dir).map_err(io_err(&audio_dir))? {
            let entry = entry.map_err(io_err(&audio_dir))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "wav") && !known.contains(&path) {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }

        let next_id = manifest
            .iter()
            .filter_map(|u| u.id.strip_prefix("utt").and_then(|s| s.parse::<u64>().ok()))
            .max()
            .map_or(0, |m| m + 1);

        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            trigger,
            next_id,
            generation: 0,
            pending_drain: None,
        })
    }

    pub fn count(&self) -> usize {
        self.manifest.len()
    }

    pub fn trigger(&self) -> usize {
        self.trigger
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// True once the cached count has reached the trigger N.
    pub fn ready(&self) -> bool {
        self.manifest.len() >= self.trigger
    }

    /// Persists audio plus a manifest entry and returns the new count. The
    /// audio lands on disk before the manifest line, so a crash in between
    /// leaves only an orphan that `open` cleans up.
    pub fn add_utterance(
        &mut self,
        audio: &AudioBuffer,
        transcript: &str,
    ) -> Result<usize, CacheError> {
        let text = normalize_transcript(transcript)?;
        let id = format!("utt{:06}", self.next_id);
        let rel = PathBuf::from("audio").join(format!("{id}.wav"));
        let abs = self.root.join(&rel);
        write_wav(&abs, audio)?;

        let utt = Utterance {
            id,
            audio: rel,
            text,
            dur_s: audio.duration_s(),
        };
        let manifest_path = self.root.join("manifest.jsonl");
        let line = serde_json::to_string(&utt)
            .map_err(|e| CacheError::Corrupt(format!("manifest encode: {e}")))?;
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest_path)
            .map_err(io_err(&manifest_path))?;
        writeln!(file, "{line}").map_err(io_err(&manifest_path))?;
        file.sync_all().map_err(io_err(&manifest_path))?;

        self.next_id += 1;
        self.manifest.push(utt);
        Ok(self.manifest.len())
    }

    /// Seeded random split into (count - validation_size, validation_size).
    /// Nothing is deleted until the returned token comes back via `confirm`,
    /// so a failed session keeps its data.
    pub fn drain(
        &mut self,
        validation_size: usize,
        seed: u64,
    ) -> Result<(Vec<Utterance>, Vec<Utterance>, CompletionToken), CacheError> {
        if !self.ready() {
            return Err(CacheError::NotReady {
                count: self.count(),
                trigger: self.trigger,
            });
        }
        if validation_size == 0 || validation_size >= self.count() {
            return Err(CacheError::SplitTooLarge {
                count: self.count(),
                validation_size,
            });
        }
        let mut indices: Vec<usize> = (0..self.manifest.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let (val_idx, train_idx) = indices.split_at(validation_size);
        let val = val_idx.iter().map(|&i| self.manifest[i].clone()).collect();
        let train = train_idx.iter().map(|&i| self.manifest[i].clone()).collect();

        self.generation += 1;
        self.pending_drain = Some(self.generation);
        Ok((
            train,
            val,
            CompletionToken {
                generation: self.generation,
            },
        ))
    }

    /// Completes a drained session: removes the audio files and manifest.
    pub fn confirm(&mut self, token: CompletionToken) -> Result<(), CacheError> {
        if self.pending_drain != Some(token.generation) {
            return Err(CacheError::StaleToken);
        }
        for utt in &self.manifest {
            let path = self.root.join(&utt.audio);
            if path.exists() {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        let manifest_path = self.root.join("manifest.jsonl");
        fs::write(&manifest_path, b"").map_err(io_err(&manifest_path))?;
        self.manifest.clear();
        self.pending_drain = None;
        Ok(())
    }

    /// Loads the audio for one cached utterance.
    pub fn load_audio(&self, utt: &Utterance) -> Result<AudioBuffer, CacheError> {
        Ok(read_wav(&self.root.join(&utt.audio))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn beep() -> AudioBuffer {
        let samples: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.2).sin() * 0.4).collect();
        AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_transcript("Hello, WORLD").unwrap(), "hello world");
        assert_eq!(normalize_transcript("  a   b\tc ").unwrap(), "a b c");
        assert_eq!(normalize_transcript("it's fine.").unwrap(), "it's fine");
        match normalize_transcript("catch 22") {
            Err(CacheError::BadTranscript(chars)) => assert_eq!(chars, vec!['2']),
            other => panic!("expected BadTranscript, got {other:?}"),
        }
        assert!(matches!(
            normalize_transcript("?!"),
            Err(CacheError::EmptyTranscript)
        ));
    }

    #[test]
    fn add_increments_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = UtteranceCache::open(dir.path(), 60).unwrap();
        assert_eq!(cache.count(), 0);
        assert_eq!(cache.add_utterance(&beep(), "first one").unwrap(), 1);
        assert_eq!(cache.add_utterance(&beep(), "second one").unwrap(), 2);
        assert_eq!(cache.utterances()[0].text, "first one");
    }

    #[test]
    fn bad_transcript_is_rejected_before_any_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = UtteranceCache::open(dir.path(), 10).unwrap();
        assert!(matches!(
            cache.add_utterance(&beep(), "agent 007"),
            Err(CacheError::BadTranscript(_))
        ));
        assert_eq!(cache.count(), 0);
        assert_eq!(fs::read_dir(dir.path().join("audio")).unwrap().count(), 0);
    }

    #[test]
    fn ready_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = UtteranceCache::open(dir.path(), 3).unwrap();
        cache.add_utterance(&beep(), "one").unwrap();
        cache.add_utterance(&beep(), "two").unwrap();
        assert!(!cache.ready());
        cache.add_utterance(&beep(), "three").unwrap();
        assert!(cache.ready());

        let dir2 = tempfile::tempdir().unwrap();
        let mut tiny = UtteranceCache::open(dir2.path(), 1).unwrap();
        tiny.add_utterance(&beep(), "only").unwrap();
        assert!(tiny.ready());
    }

    #[test]
    fn drain_splits_are_disjoint_and_exhaustive() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = UtteranceCache::open(dir.path(), 7).unwrap();
        for i in 0..7 {
            cache
                .add_utterance(&beep(), &format!("utterance number {}", "x".repeat(i + 1)))
                .unwrap();
        }
        let (train, val, token) = cache.drain(2, 99).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(val.len(), 2);
        let mut ids: Vec<&str> = train.iter().chain(&val).map(|u| u.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 7);

        cache.confirm(token).unwrap();
        assert!(!cache.ready());
        assert_eq!(cache.count(), 0);
        assert_eq!(fs::read_dir(dir.path().join("audio")).unwrap().count(), 0);
    }

    #[test]
    fn drain_is_seed_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = UtteranceCache::open(dir.path(), 5).unwrap();
        for _ in 0..5 {
            cache.add_utterance(&beep(), "same words here").unwrap();
        }
        let (t1, v1, _) = cache.drain(2, 4).unwrap();
        let (t2, v2, _) = cache.drain(2, 4).unwrap();
        let ids = |v: &[Utterance]| v.iter().map(|u| u.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&t1), ids(&t2));
        assert_eq!(ids(&v1), ids(&v2));
    }

    #[test]
    fn not_ready_drain_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = UtteranceCache::open(dir.path(), 60).unwrap();
        cache.add_utterance(&beep(), "lonely").unwrap();
        assert!(matches!(
            cache.drain(10, 0),
            Err(CacheError::NotReady {
                count: 1,
                trigger: 60
            })
        ));
    }

    #[test]
    fn crash_before_confirm_keeps_data() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut cache = UtteranceCache::open(dir.path(), 4).unwrap();
            for _ in 0..4 {
                cache.add_utterance(&beep(), "keep me").unwrap();
            }
            let (_train, _val, _token) = cache.drain(1, 0).unwrap();
            // Simulated crash: token dropped, confirm never called.
        }
        let cache = UtteranceCache::open(dir.path(), 4).unwrap();
        assert_eq!(cache.count(), 4);
        assert!(cache.ready());
    }

    #[test]
    fn stale_token_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = UtteranceCache::open(dir.path(), 2).unwrap();
        cache.add_utterance(&beep(), "a a").unwrap();
        cache.add_utterance(&beep(), "b b").unwrap();
        let (_, _, old) = cache.drain(1, 0).unwrap();
        let (_, _, new) = cache.drain(1, 0).unwrap();
        assert!(matches!(cache.confirm(old), Err(CacheError::StaleToken)));
        cache.confirm(new).unwrap();
    }

    #[test]
    fn orphaned_audio_is_cleaned_on_open() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut cache = UtteranceCache::open(dir.path(), 5).unwrap();
            cache.add_utterance(&beep(), "real").unwrap();
        }
        let orphan = dir.path().join("audio").join("orphan.wav");
        write_wav(&orphan, &beep()).unwrap();
        let cache = UtteranceCache::open(dir.path(), 5).unwrap();
        assert_eq!(cache.count(), 1);
        assert!(!orphan.exists());
    }

    #[test]
    fn reopen_preserves_entries_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut cache = UtteranceCache::open(dir.path(), 5).unwrap();
            cache.add_utterance(&beep(), "one").unwrap();
            cache.add_utterance(&beep(), "two").unwrap();
        }
        let mut cache = UtteranceCache::open(dir.path(), 5).unwrap();
        assert_eq!(cache.count(), 2);
        cache.add_utterance(&beep(), "three").unwrap();
        let ids: Vec<&str> = cache.utterances().iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, vec!["utt000000", "utt000001", "utt000002"]);
    }
}
