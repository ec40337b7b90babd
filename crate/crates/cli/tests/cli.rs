//! End-to-end tests of the sttp binary: exit codes, diagnostics, artifacts.

use std::process::{Command, Output};

fn sttp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sttp"))
}

fn run(args: &[&str]) -> Output {
    sttp().args(args).output().expect("binary runs")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(code(&run(&["--help"])), 0);
    for sub in ["synth", "pretrain", "personalize", "eval", "sweep", "featurize"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        assert!(text.contains("--out"), "{sub} help documents --out");
        assert!(text.contains("--config"), "{sub} help documents --config");
    }
}

#[test]
fn missing_required_argument_exits_two() {
    let out = run(&["pretrain"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "definitely_not_a_key = 1\n").unwrap();
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "synth",
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("definitely_not_a_key"));
}

#[test]
fn invalid_config_value_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[training]\nlearning_rate = 0.0\n").unwrap();
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "synth",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn personalize_on_unready_cache_exits_three_naming_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cache_root = dir.path().join("cache");

    // Two cached utterances against the default trigger of 60.
    {
        use stt_core::audio::{AudioBuffer, SAMPLE_RATE};
        use stt_core::cache::UtteranceCache;
        let samples: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.2).sin() * 0.4).collect();
        let beep = AudioBuffer::new(samples, SAMPLE_RATE).unwrap();
        let mut cache = UtteranceCache::open(&cache_root, 60).unwrap();
        cache.add_utterance(&beep, "first words").unwrap();
        cache.add_utterance(&beep, "second words").unwrap();
    }

    // The baseline is not reached before the readiness check fires.
    let out = run(&[
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "personalize",
        "--baseline",
        dir.path().join("missing.ckpt").to_str().unwrap(),
        "--cache-root",
        cache_root.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains('2'), "names the cached count: {err}");
    assert!(err.contains("60"), "names the trigger N: {err}");
}

#[test]
fn featurize_writes_csv_and_stamps_nothing_on_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("tone.wav");
    {
        use stt_core::audio::{write_wav, AudioBuffer, SAMPLE_RATE};
        let samples: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.3).sin() * 0.5).collect();
        write_wav(&wav, &AudioBuffer::new(samples, SAMPLE_RATE).unwrap()).unwrap();
    }
    let out_dir = dir.path().join("out");
    let out = run(&[
        "--out",
        out_dir.to_str().unwrap(),
        "featurize",
        "--wav",
        wav.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("features.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 61);
    assert_eq!(lines[0].split(',').count(), 80);

    let missing = run(&[
        "--out",
        out_dir.to_str().unwrap(),
        "featurize",
        "--wav",
        dir.path().join("nope.wav").to_str().unwrap(),
    ]);
    assert_eq!(code(&missing), 4);
}

#[test]
fn synth_writes_manifest_and_stamp() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[synth]\nwords_per_utterance = [1, 2]\nword_len = [2, 3]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("corpus");
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "5",
        "synth",
        "--voices",
        "2",
        "--utterances",
        "3",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 6);
    assert!(out_dir.join("manifest_voice1.jsonl").exists());
    assert!(out_dir.join("voice2").exists());

    let stamp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_stamp.json")).unwrap())
            .unwrap();
    assert_eq!(stamp["command"], "synth");
    assert_eq!(stamp["seeds"]["synth"], 5);
    assert_eq!(stamp["format_versions"]["checkpoint"], 1);
}

/// Plumbing smoke over the whole pipeline at tiny sizes: synth -> pretrain
/// -> cache fill -> personalize -> eval. Artifact existence and exit codes;
/// the accuracy-improvement claim lives in the acceptance suite.
#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
[synth]
words_per_utterance = [1, 2]
word_len = [2, 3]
voices = 2
utterances_per_voice = 8

[training]
batch_size = 4
max_epochs = 2
learning_rate = 0.003
cache_trigger = 8
validation_size = 2
"#,
    )
    .unwrap();
    let base: Vec<String> = vec!["--config".into(), config.display().to_string()];
    let corpus = dir.path().join("corpus");

    let out = sttp()
        .args(&base)
        .args(["--out", corpus.to_str().unwrap(), "--seed", "3", "synth"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "synth: {}", stderr(&out));

    let pretrain_dir = dir.path().join("pretrain");
    let out = sttp()
        .args(&base)
        .args([
            "--out",
            pretrain_dir.to_str().unwrap(),
            "--seed",
            "3",
            "pretrain",
            "--manifest",
            corpus.join("manifest_voice1.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "pretrain: {}", stderr(&out));
    let baseline = pretrain_dir.join("baseline.ckpt");
    assert!(baseline.exists());

    // Fill a cache with voice 2's utterances.
    let cache_root = dir.path().join("cache");
    {
        use stt_core::cache::UtteranceCache;
        use stt_core::data::load_manifest;
        let entries = load_manifest(&corpus.join("manifest_voice2.jsonl")).unwrap();
        let mut cache = UtteranceCache::open(&cache_root, 8).unwrap();
        for e in &entries {
            let audio = stt_core::audio::read_wav(&e.audio).unwrap();
            cache.add_utterance(&audio, &e.text).unwrap();
        }
        assert!(cache.ready());
    }

    let personalize_dir = dir.path().join("personalized");
    let out = sttp()
        .args(&base)
        .args([
            "--out",
            personalize_dir.to_str().unwrap(),
            "--seed",
            "3",
            "personalize",
            "--baseline",
            baseline.to_str().unwrap(),
            "--cache-root",
            cache_root.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "personalize: {}", stderr(&out));
    assert!(personalize_dir.join("personalized.ckpt").exists());
    assert!(personalize_dir.join("metrics.jsonl").exists());

    // The confirmed drain emptied the cache.
    {
        use stt_core::cache::UtteranceCache;
        let cache = UtteranceCache::open(&cache_root, 8).unwrap();
        assert_eq!(cache.count(), 0);
    }

    let eval_dir = dir.path().join("eval");
    let out = sttp()
        .args(&base)
        .args([
            "--out",
            eval_dir.to_str().unwrap(),
            "eval",
            "--checkpoint",
            personalize_dir.join("personalized.ckpt").to_str().unwrap(),
            "--manifest",
            corpus.join("manifest_voice2.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "eval: {}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["items"].as_array().unwrap().len(), 8);
    assert!(report["mean_wer"].is_f64());
    assert!(report["word_weighted_wer"].is_f64());
}

#[test]
fn eval_on_empty_manifest_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.jsonl");
    std::fs::write(&manifest, "").unwrap();
    let out = run(&[
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "eval",
        "--checkpoint",
        dir.path().join("missing.ckpt").to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
}

