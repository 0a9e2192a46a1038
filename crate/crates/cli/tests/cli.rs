use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synth.n_dialogues=2",
    "--set",
    "synth.gestures_per_speaker=12",
    "--set",
    "synth.referents=6",
    "--set",
    "train.epochs=2",
    "--set",
    "train.batch_size=8",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gesture-clr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn synth_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = a.path().to_str().unwrap();
    let pb = b.path().to_str().unwrap();
    let first = ok(&strs(&with(SMALL, &["synth", "--seed", "9", "--out", pa])));
    let second = ok(&strs(&with(SMALL, &["synth", "--seed", "9", "--out", pb])));
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(String::from_utf8_lossy(&first.stdout).trim().len(), 64);
    let report = json(&a.path().join("synth_report.json"));
    assert_eq!(report["seed"], 9);
    assert!(report["pairs"].as_u64().unwrap() > 0);
    assert!(a.path().join("corpus").is_dir());

    let other = ok(&strs(&with(SMALL, &["synth", "--seed", "10", "--out", pb])));
    assert_ne!(first.stdout, other.stdout);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let out = run(&["--set", "train.nonsense=1", "synth", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));
    let out = run(&["--set", "no-equals-sign", "synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grad_check_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["grad-check", "--profile", "desk", "--seed", "1", "--out", out]);
    let report = json(&dir.path().join("grad_check.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 18);
}

#[test]
fn desk_pipeline_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let base = with(SMALL, &["--profile", "desk", "--seed", "3", "--out", out]);
    ok(&strs(&with(&strs(&base), &["synth"])));
    let corpus = dir.path().join("corpus");
    let corpus = corpus.to_str().unwrap();
    ok(&strs(&with(&strs(&base), &["train", "--corpus", corpus, "--mode", "unimodal"])));
    let train = json(&dir.path().join("train_report.json"));
    assert_eq!(train["objective"], "unimodal");
    assert_eq!(train["epochs"], 2);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let checkpoint = dir.path().join("checkpoint.bin");
    let checkpoint = checkpoint.to_str().unwrap();
    ok(&strs(&with(&strs(&base), &["embed", "--checkpoint", checkpoint, "--corpus", corpus])));
    let embeddings = dir.path().join("embeddings.csv");
    let embeddings = embeddings.to_str().unwrap();

    ok(&strs(&with(&strs(&base), &["eval-form", "--embeddings", embeddings, "--corpus", corpus])));
    let form = json(&dir.path().join("form_report.json"));
    assert!(form["n_pairs"].as_u64().unwrap() > 0);
    assert_eq!(form["groups"].as_array().unwrap().len(), form["distributions"].as_array().unwrap().len());
    assert!(dir.path().join("pair_scores.csv").is_file());

    ok(&strs(&with(&strs(&base), &["eval-dialogue", "--checkpoint", checkpoint, "--corpus", corpus])));
    let dialogue = json(&dir.path().join("dialogue_report.json"));
    let names: Vec<&str> = dialogue["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["hypothesis"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["H1a", "H1b", "H2", "H3-same-ref", "H3-diff-ref", "H3"]);

    let probe_args = with(&strs(&base), &["--set", "probe.seeds=2", "--set", "probe.epochs=3"]);
    ok(&strs(&with(&strs(&probe_args), &["probe", "--checkpoint", checkpoint, "--corpus", corpus])));
    let probe = json(&dir.path().join("probe_report.json"));
    assert_eq!(probe.as_array().unwrap().len(), 10);
    let csv = std::fs::read_to_string(dir.path().join("probe_aucs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 2);
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let out = run(&["train", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
