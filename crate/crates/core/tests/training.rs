use std::path::Path;

use stylediff_core::checkpoint;
use stylediff_core::objectives::Objective;
use stylediff_core::synthetic::{write_corpus, ToyWorldConfig};
use stylediff_core::train::{train_from_config, DataPaths, TrainConfig};
use stylediff_core::ModelConfig;

fn tiny_world() -> ToyWorldConfig {
    ToyWorldConfig {
        content_words: 20,
        markers_per_style: 4,
        span_pairs_per_language: 60,
        parallel_pairs: 60,
        raw_sentences: 20,
        eval_sentences: 10,
        classification_pairs: 10,
        vocab_size: 128,
        ..ToyWorldConfig::default()
    }
}

fn tiny_config(dir: &Path, cycles: u64, objectives: Vec<Objective>) -> TrainConfig {
    TrainConfig {
        seed: 5,
        cycles,
        batch_size: 8,
        objectives,
        checkpoint: dir.join("model.ckpt"),
        data: DataPaths {
            vocab: Some(dir.join("vocab.txt")),
            spans: Some(dir.join("spans.jsonl")),
            parallel: Some(dir.join("parallel.jsonl")),
            paraphrases: None,
        },
        model: ModelConfig { vocab_size: 128, d_model: 16, n_layers_enc: 1, n_layers_dec: 1, n_heads: 2, d_ff: 32, max_seq_len: 32, ..ModelConfig::default() },
        ..TrainConfig::default()
    }
}

fn params(path: &Path) -> Vec<Vec<u32>> {
    let ck = checkpoint::load::<f32>(path).unwrap();
    ck.model.params().tensors().iter().map(|t| t.data().iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn denoising_loss_goes_down() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&tiny_world(), dir.path()).unwrap();
    let cfg = tiny_config(dir.path(), 60, vec![Objective::Denoise]);
    let mut losses = Vec::new();
    train_from_config(&cfg, |r| losses.push(r.losses[&Objective::Denoise])).unwrap();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "loss did not drop: {head} -> {tail}");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let objectives = vec![Objective::Denoise, Objective::Translate, Objective::Backtranslate];
    let straight = tempfile::tempdir().unwrap();
    write_corpus(&tiny_world(), straight.path()).unwrap();
    train_from_config(&tiny_config(straight.path(), 6, objectives.clone()), |_| {}).unwrap();

    let split = tempfile::tempdir().unwrap();
    write_corpus(&tiny_world(), split.path()).unwrap();
    train_from_config(&tiny_config(split.path(), 3, objectives.clone()), |_| {}).unwrap();
    let out = train_from_config(&tiny_config(split.path(), 6, objectives), |_| {}).unwrap();
    assert_eq!(out.resumed_from, Some(9));

    assert_eq!(params(&straight.path().join("model.ckpt")), params(&split.path().join("model.ckpt")));
}
