use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hsas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsas")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    o
}

/// A small synthetic corpus, its lexicon and a fast training config.
fn setup(dir: &Path, n: &str) {
    ok(hsas(dir, &["ingest", "--synthetic", n, "--out", "c.jsonl", "--lexicon-out", "lex.tsv"]));
    fs::write(dir.join("cfg.json"), r#"{"lexicon": "lex.tsv", "dim": 4096, "eta": 0.01, "epochs": 8}"#).unwrap();
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hsas(dir.path(), &["evaluate", "--bogus"]).status.code(), Some(1));
    assert_eq!(hsas(dir.path(), &["summarize", "--variant", "both", "--corpus", "c", "--model", "m"]).status.code(), Some(1));
    assert_eq!(hsas(dir.path(), &["--workers", "0", "ingest", "--synthetic", "3"]).status.code(), Some(1));
    assert_eq!(hsas(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(hsas(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = hsas(dir.path(), &["ingest", "--input", "missing.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));

    fs::write(dir.path().join("bad.jsonl"), "{\"id\": \"a\", \"lang\": \"en\"}\n").unwrap();
    assert_eq!(hsas(dir.path(), &["ingest", "--input", "bad.jsonl"]).status.code(), Some(2));

    fs::write(dir.path().join("cfg.json"), "{\"epochs\": \"many\"}").unwrap();
    assert_eq!(hsas(dir.path(), &["--config", "cfg.json", "ingest", "--synthetic", "3"]).status.code(), Some(2));
    assert_eq!(hsas(dir.path(), &["quantize", "--model", "none.hsas", "--out", "q.hsas"]).status.code(), Some(2));
}

#[test]
fn ingest_reports_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("in.jsonl"),
        concat!(
            "{\"id\": \"1\", \"lang\": \"en\", \"text\": \"Great food.\", \"label\": \"positive\", \"extra\": 1}\n",
            "{\"id\": \"2\", \"lang\": \"es\", \"text\": \"Muy malo.\"}\n",
        ),
    )
    .unwrap();
    let o = ok(hsas(d, &["ingest", "--input", "in.jsonl", "--out", "norm.jsonl"]));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["documents"], 2);
    assert_eq!(v["labeled"], 1);
    assert_eq!(v["unknown_fields"], 1);
    assert_eq!(v["languages"]["es"], 1);

    // the normalized file has no unknown fields left
    let again: Value = serde_json::from_str(&stdout(&ok(hsas(d, &["ingest", "--input", "norm.jsonl", "--validate"])))).unwrap();
    assert_eq!(again["documents"], 2);
    assert_eq!(again["unknown_fields"], 0);
    assert_eq!(hsas(d, &["ingest", "--input", "in.jsonl", "--validate"]).status.code(), Some(2));
}

#[test]
fn synthetic_corpus_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(hsas(d, &["ingest", "--synthetic", "12", "--out", "a.jsonl"]));
    ok(hsas(d, &["ingest", "--synthetic", "12", "--out", "b.jsonl"]));
    ok(hsas(d, &["--seed", "3", "ingest", "--synthetic", "12", "--out", "c.jsonl"]));
    let read = |f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn train_evaluate_summarize_quantize() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, "150");
    let o = ok(hsas(d, &["--config", "cfg.json", "train", "--corpus", "c.jsonl", "--out", "m.hsas"]));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["train"]["base"]["epochs"].as_array().unwrap().len() == 8);
    assert_eq!(report["calibration_preserved_labels"], true);

    let table = stdout(&ok(hsas(d, &["--config", "cfg.json", "evaluate", "--corpus", "c.jsonl", "--model", "m.hsas"])));
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Method", "Accuracy", "F1", "ROUGE-1", "BLEU"]);
    assert!(table.contains("Extractive Only") && table.contains("Abstractive Only") && table.contains("Hybrid"));

    let json = stdout(&ok(hsas(
        d,
        &["--config", "cfg.json", "evaluate", "--corpus", "c.jsonl", "--model", "m.hsas", "--json", "--report", "r.json"],
    )));
    let v: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["alpha"], 0.05);
    assert_eq!(v["variants"].as_array().unwrap().len(), 3);
    assert_eq!(v["comparisons"].as_array().unwrap().len(), 2);
    assert!(v["model_sizes"]["quantized_bytes"].as_u64() < v["model_sizes"]["float_bytes"].as_u64());
    let saved: Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(saved, v);

    let one = stdout(&ok(hsas(d, &["--config", "cfg.json", "--workers", "1", "summarize", "--corpus", "c.jsonl", "--model", "m.hsas"])));
    let four = stdout(&ok(hsas(d, &["--config", "cfg.json", "--workers", "4", "summarize", "--corpus", "c.jsonl", "--model", "m.hsas"])));
    assert_eq!(one, four);
    assert_eq!(one.lines().count(), 150);
    let first: Value = serde_json::from_str(one.lines().next().unwrap()).unwrap();
    assert_eq!(first["variant"], "hybrid");
    assert!(first["prediction"]["label"].is_string());

    let q = stdout(&ok(hsas(
        d,
        &["--config", "cfg.json", "quantize", "--model", "m.hsas", "--out", "q.hsas", "--drop-float", "--corpus", "c.jsonl"],
    )));
    let q: Value = serde_json::from_str(&q).unwrap();
    assert!(q["agreement"].as_f64().unwrap() >= 0.9);
    assert!(fs::metadata(d.join("q.hsas")).unwrap().len() < fs::metadata(d.join("m.hsas")).unwrap().len());
    // a quantized-only container still serves predictions, but not --float
    ok(hsas(d, &["--config", "cfg.json", "analyze", "--model", "q.hsas", "--text", "Some text here."]));
    assert_eq!(hsas(d, &["analyze", "--model", "q.hsas", "--float", "--text", "x y z."]).status.code(), Some(2));
}

#[test]
fn training_is_reproducible_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, "60");
    ok(hsas(d, &["--config", "cfg.json", "--workers", "1", "train", "--corpus", "c.jsonl", "--out", "a.hsas"]));
    ok(hsas(d, &["--config", "cfg.json", "--workers", "3", "train", "--corpus", "c.jsonl", "--out", "b.hsas"]));
    assert_eq!(fs::read(d.join("a.hsas")).unwrap(), fs::read(d.join("b.hsas")).unwrap());
}

#[test]
fn bench_reports_sizes_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, "60");
    ok(hsas(d, &["--config", "cfg.json", "train", "--corpus", "c.jsonl", "--out", "m.hsas"]));
    let o = ok(hsas(d, &["--config", "cfg.json", "bench", "--model", "m.hsas", "--sizes", "50,500", "--repeats", "1"]));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert!(v["latency_ratio"].as_f64().unwrap() > 0.0);
    assert!(v["runs"][0][1]["size_ratio"].as_f64().unwrap() < 1.0);
}
