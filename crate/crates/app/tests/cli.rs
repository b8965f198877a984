use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

use serde_json::Value;
use stylediff_core::checkpoint;
use stylediff_core::paraphrase::MiningStats;
use stylediff_core::records::{read_jsonl, ParaphrasePair};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stylediff"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const DATA: &str = r#"
output_dir = "data"
[world]
content_words = 20
markers_per_style = 4
span_pairs_per_language = 80
parallel_pairs = 80
raw_sentences = 30
eval_sentences = 20
classification_pairs = 10
vocab_size = 128
"#;

fn train_toml(cycles: u64, every: u64, objectives: &str, extra: &str) -> String {
    format!(
        r#"
seed = 2
cycles = {cycles}
batch_size = 8
objectives = [{objectives}]
checkpoint = "model.ckpt"
checkpoint_every = {every}
{extra}
[data]
vocab = "data/vocab.txt"
spans = "data/spans.jsonl"
parallel = "data/parallel.jsonl"
paraphrases = "paraphrases.jsonl"
[model]
vocab_size = 128
d_model = 16
n_layers_enc = 1
n_layers_dec = 1
n_heads = 2
d_ff = 32
max_seq_len = 32
"#
    )
}

fn gen(dir: &Path) {
    std::fs::write(dir.join("data.toml"), DATA).unwrap();
    ok(&run(&["gen-data", "--config", dir.join("data.toml").to_str().unwrap()]));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    std::fs::write(d.join("base.toml"), train_toml(8, 0, r#""denoise", "translate", "backtranslate""#, "")).unwrap();
    ok(&run(&["train", "--config", s(&d.join("base.toml"))]));

    let out = ok(&run(&[
        "mine-paraphrases",
        "--checkpoint",
        s(&d.join("model.ckpt")),
        "--corpus",
        s(&d.join("data/raw.txt")),
        "--temps",
        "0.8,1.0",
        "--band",
        "0.2,0.98",
    ]));
    let stats: MiningStats = serde_json::from_str(&out).unwrap();
    let f = &stats.filter;
    assert_eq!(f.kept + f.below + f.above + f.errors, f.total);
    assert_eq!(f.total + stats.decode_failures, 2 * stats.sources);
    let pairs: Vec<ParaphrasePair> = read_jsonl(&d.join("paraphrases.jsonl")).unwrap();
    assert_eq!(pairs.len(), stats.persisted);
    assert!(pairs.iter().all(|p| (0.2..=0.98).contains(&p.sim)));

    let out = ok(&run(&[
        "sweep",
        "--checkpoint",
        s(&d.join("model.ckpt")),
        "--eval-file",
        s(&d.join("data/eval.jsonl")),
        "--candidates",
        "0.5,1",
        "--validation",
        "5",
        "--outputs",
        s(&d.join("outputs.jsonl")),
    ]));
    let report: Value = serde_json::from_str(&out).unwrap();
    let grid = report["control"]["lambda_grid"].as_array().unwrap();
    assert_eq!(grid.len(), 3);
    assert_eq!(report["test"], 15);

    let out = ok(&run(&["evaluate", "--inputs", s(&d.join("outputs.jsonl")), "--scorer", &format!("oracle:{}", s(&d.join("data/manifest.json"))), "--acc-variant", "absolute"]));
    let eval: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(eval["records"], 45);
    assert_eq!(eval["acc_variant"], "absolute");
    assert_eq!(eval["systems"][0]["agg"], eval["systems"][0]["overall"]["a_agg"]);
}

#[test]
fn evaluate_rejects_invalid_records_unless_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("out.jsonl");
    std::fs::write(&p, "{\"input\":\"a\",\"output\":\"b\",\"lambda\":1.0}\n{\"input\":\n").unwrap();
    let strict = run(&["evaluate", "--inputs", s(&p), "--scorer", "oracle"]);
    assert!(!strict.status.success());
    assert!(String::from_utf8_lossy(&strict.stderr).contains("invalid record"));
    let lenient = ok(&run(&["evaluate", "--inputs", s(&p), "--scorer", "oracle", "--skip-invalid", "--sim-threshold", "0.5"]));
    let v: Value = serde_json::from_str(&lenient).unwrap();
    assert_eq!((v["records"].as_u64(), v["unparseable"].as_u64(), v["sim_threshold"].as_f64()), (Some(1), Some(1), Some(0.5)));
    assert!(!run(&["evaluate", "--inputs", s(&p), "--scorer", "bogus", "--skip-invalid"]).status.success());
    assert!(!run(&["evaluate", "--inputs", s(&p), "--acc-variant", "sideways"]).status.success());
}

#[test]
fn training_reports_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.toml"), train_toml(2, 0, r#""denoise", "diffur""#, "")).unwrap();
    let out = run(&["train", "--config", s(&dir.path().join("t.toml"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("vocab.txt") && err.contains("paraphrases.jsonl"), "{err}");
}

/// SIGKILL at arbitrary points while checkpoints are being written: the
/// checkpoint on disk is always loadable, and training resumes from it.
#[test]
fn checkpoint_survives_kill_injection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    std::fs::write(d.join("t.toml"), train_toml(400, 1, r#""denoise""#, "")).unwrap();
    let ck = d.join("model.ckpt");
    let mut last_step = 0;
    for (i, wait) in [150u64, 220, 90, 310, 170, 260].into_iter().enumerate() {
        let mut child = bin().args(["train", "--config", s(&d.join("t.toml"))]).spawn().unwrap();
        std::thread::sleep(Duration::from_millis(wait + 40 * i as u64));
        child.kill().unwrap();
        child.wait().unwrap();
        if ck.exists() {
            let loaded = checkpoint::load::<f32>(&ck).unwrap_or_else(|e| panic!("kill {i} left a broken checkpoint: {e}"));
            let step = loaded.meta["step"].as_u64().unwrap();
            assert!(step >= last_step);
            last_step = step;
        }
    }
    assert!(last_step > 0, "no checkpoint was ever written");
    ok(&run(&["train", "--config", s(&d.join("t.toml"))]));
    assert_eq!(checkpoint::load::<f32>(&ck).unwrap().meta["step"].as_u64(), Some(400));
}
