//! Scratch harness for picking training hyperparameters. Not part of the
//! test suite.

use stt_core::data::TrainItem;
use stt_core::model::{init_model, ModelConfig};
use stt_core::synth::{generate_transcript, synthesize_utterance, SynthSpec};
use stt_core::trainer::{calc_loss, predict, train_step, AdamState, TrainingConfig};
use stt_core::{audio, eval};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn items_for_voice(spec: &SynthSpec, voice: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<TrainItem> {
    (0..n)
        .map(|i| {
            let text = generate_transcript(spec, rng);
            let buf = synthesize_utterance(spec, voice, &text).unwrap();
            let feats = audio::log_mel(&buf).unwrap();
            TrainItem {
                id: format!("v{voice}u{i}"),
                features: feats.frames().clone(),
                label: stt_core::ctc::LabelSequence::from_text(&text).unwrap(),
                transcript: text,
            }
        })
        .collect()
}

fn train_wer(config: &ModelConfig, params: &stt_core::model::ParamSet, items: &[TrainItem]) -> f64 {
    let mut sum = 0.0;
    for it in items {
        let hyp = predict(config, params, &it.features).unwrap();
        sum += eval::wer(&it.transcript, &hyp).wer_percent;
    }
    sum / items.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("overfit");
    let lr: f64 = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);

    let words: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2);
    let hscale: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let spec = SynthSpec {
        words_per_utterance: (1, words),
        word_len: (2, 4),
        harmonic_scale: hscale,
        ..SynthSpec::default()
    };
    let mut config = ModelConfig::default();
    if let Some(l) = args.get(11).and_then(|s| s.parse::<usize>().ok()) {
        config.blstm_layers = l;
    }

    let batch_size: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let normalize: bool = args.get(4).map(|s| s == "norm").unwrap_or(false);

    if mode == "overfit" {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let items = items_for_voice(&spec, 1, 5, &mut rng);
        let _ = normalize;
        for it in &items {
            println!(
                "item {}: {:?} T={} L={}",
                it.id,
                it.transcript,
                it.features.nrows(),
                it.label.len()
            );
        }
        let tc = TrainingConfig {
            batch_size,
            learning_rate: lr,
            ..TrainingConfig::default()
        };
        let mut params = init_model(&config, 7).unwrap();
        let mut adam = AdamState::new();
        let initial_loss = calc_loss(&config, &params, &items).unwrap();
        println!("initial loss {initial_loss:.4}, lr {lr}, batch {batch_size}, norm {normalize}");
        let start = std::time::Instant::now();
        for epoch in 1..=200 {
            let mut loss = 0.0;
            for chunk in (0..items.len()).collect::<Vec<_>>().chunks(batch_size) {
                let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
                let l = train_step(&config, &mut params, &batch, &mut adam, &tc).unwrap();
                loss += l * batch.len() as f64;
            }
            loss /= items.len() as f64;
            if epoch % 10 == 0 || epoch <= 5 {
                let wer = train_wer(&config, &params, &items);
                println!(
                    "epoch {epoch:3} loss {loss:8.4} wer {wer:6.2}% elapsed {:.1}s",
                    start.elapsed().as_secs_f64()
                );
                if wer == 0.0 && loss <= 0.1 * initial_loss {
                    println!("converged at epoch {epoch}, {:.1}s", start.elapsed().as_secs_f64());
                    let hyp = predict(&config, &params, &items[0].features).unwrap();
                    println!("sample: {:?} -> {:?}", items[0].transcript, hyp);
                    return;
                }
            }
        }
        let wer = train_wer(&config, &params, &items);
        println!("end: wer {wer:.2}% elapsed {:.1}s", start.elapsed().as_secs_f64());
    } else if mode == "e2e" {
        // Pretrain on voices 1-6 (shared char frequencies, distinct
        // timbres), evaluate on a frequency-shifted held-out voice 7,
        // personalize, compare.
        use stt_core::checkpoint::save_checkpoint;
        use stt_core::trainer::run_personalization;
        let pretrain_epochs: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(25);
        let pretrain_utts: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(15);
        let plr: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(lr);
        let base_spec = SynthSpec {
            voice_offset_hz: 0.0,
            ..spec.clone()
        };
        let shifted_spec = SynthSpec {
            base_freq_hz: base_spec.base_freq_hz + base_spec.char_spacing_hz / 2.0,
            ..base_spec.clone()
        };
        let seeds: Vec<u64> = if args.get(10).map(|s| s == "one").unwrap_or(false) {
            vec![1]
        } else {
            vec![1, 2, 3]
        };
        for seed in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut pretrain_items = Vec::new();
            for voice in 1..=6 {
                pretrain_items.extend(items_for_voice(&base_spec, voice, pretrain_utts, &mut rng));
            }
            let v6_val = items_for_voice(&base_spec, 2, 10, &mut rng);
            let v7_train = items_for_voice(&shifted_spec, 7, 60, &mut rng);
            let v7_val = items_for_voice(&shifted_spec, 7, 10, &mut rng);

            let tc = TrainingConfig {
                batch_size,
                learning_rate: lr,
                max_epochs: pretrain_epochs,
                seed,
                ..TrainingConfig::default()
            };
            let mut params = init_model(&config, seed).unwrap();
            let mut adam = AdamState::new();
            let start = std::time::Instant::now();
            for epoch in 1..=pretrain_epochs {
                let mut order: Vec<usize> = (0..pretrain_items.len()).collect();
                use rand::seq::SliceRandom;
                order.shuffle(&mut rng);
                let mut loss_sum = 0.0;
                for chunk in order.chunks(batch_size) {
                    let batch: Vec<&TrainItem> =
                        chunk.iter().map(|&i| &pretrain_items[i]).collect();
                    let l = train_step(&config, &mut params, &batch, &mut adam, &tc).unwrap();
                    loss_sum += l * batch.len() as f64;
                }
                if epoch % 5 == 0 {
                    let wer6 = train_wer(&config, &params, &v6_val);
                    let sample = predict(&config, &params, &v6_val[0].features).unwrap();
                    println!(
                        "  seed {seed} pretrain epoch {epoch}: loss {:.3} in-dist wer {wer6:.1}% {:?}->{:?} ({:.0}s)",
                        loss_sum / pretrain_items.len() as f64,
                        v6_val[0].transcript,
                        sample,
                        start.elapsed().as_secs_f64()
                    );
                }
            }
            let in_dist_wer = train_wer(&config, &params, &v6_val);
            let baseline_wer = train_wer(&config, &params, &v7_val);

            let dir = tempfile_dir();
            let baseline_path = dir.join(format!("baseline_{seed}.ckpt"));
            save_checkpoint(&params, &config, &baseline_path).unwrap();
            let ptc = TrainingConfig {
                batch_size: 5,
                learning_rate: plr,
                max_epochs: 20,
                seed,
                ..TrainingConfig::default()
            };
            let out = run_personalization(
                &config,
                &baseline_path,
                &v7_train,
                &v7_val,
                &ptc,
                &dir.join(format!("sess_{seed}")),
            )
            .unwrap();
            let personalized_wer = train_wer(&config, &out.params, &v7_val);
            println!(
                "seed {seed}: in-dist WER {in_dist_wer:.1}% | v7 baseline {baseline_wer:.2}% -> personalized {personalized_wer:.2}% (epochs {}, best {}, total {:.0}s)",
                out.history.len(),
                out.best_epoch,
                start.elapsed().as_secs_f64()
            );
        }
    } else {
        println!("unknown mode {mode}");
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("tune_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
