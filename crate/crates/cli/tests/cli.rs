use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxd_scdv::embed_store::{write_store, EmbedFormat};
use ctxd_scdv::synthetic::{context_pair_fixture, CONTRAST_PAIRS};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ctxd-scdv"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn senses(work: &Path) -> Vec<Value> {
    std::fs::read_to_string(work.join("senses.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn k_of(senses: &[Value], word: &str) -> usize {
    let w = senses.iter().find(|v| v["w"] == word).unwrap();
    w["k"].as_u64().unwrap() as usize
}

#[test]
fn contrast_pairs_split_at_default_tau() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, store) = context_pair_fixture(&CONTRAST_PAIRS, 6, 24, 0.01, 11).unwrap();
    let corpus_path = dir.path().join("pairs.jsonl");
    let store_path = dir.path().join("pairs.store.jsonl");
    corpus.write_jsonl(&corpus_path).unwrap();
    write_store(&store, &store_path, EmbedFormat::Jsonl).unwrap();
    let work = dir.path().join("work");
    let common = [
        "--corpus",
        s(&corpus_path),
        "--store",
        s(&store_path),
        "--embed-format",
        "jsonl",
        "--work-dir",
        s(&work),
        "--components",
        "2",
    ];
    ok(&[&["ingest"], &common[..]].concat());
    ok(&[&["wsd", "--tau", "0.8"], &common[..]].concat());
    let inv = senses(&work);
    for p in CONTRAST_PAIRS {
        assert_eq!(k_of(&inv, p.word), 2, "{}", p.word);
    }
    assert_eq!(k_of(&inv, "mail"), 1);

    // a lower threshold keeps only the least similar pair apart
    ok(&[&["wsd", "--tau", "0.7", "--force"], &common[..]].concat());
    let inv = senses(&work);
    assert_eq!(k_of(&inv, "apple"), 2);
    assert_eq!(k_of(&inv, "subject"), 1);
    assert_eq!(k_of(&inv, "unit"), 1);
}

struct Planted {
    _dir: tempfile::TempDir,
    config: PathBuf,
    work: PathBuf,
}

fn planted() -> Planted {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--docs-per-class", "40", "--seed", "5"]);
    let work = dir.path().join("work");
    let cfg = json!({
        "dataset": "planted",
        "corpus": data.join("corpus.jsonl"),
        "store": data.join("store.ceb"),
        "work_dir": work,
        "components": 3,
        "seed": 5,
        "eval": {
            "full_repeats": 2,
            "limited_repeats": 2,
            "fewshot_repeats": 2,
            "shots": [5],
            "fractions": [0.2, 1.0]
        }
    });
    let config = dir.path().join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    Planted {
        _dir: dir,
        config,
        work,
    }
}

#[test]
fn run_writes_report() {
    let p = planted();
    let stdout = ok(&["run", "--config", s(&p.config)]);
    assert!(stdout.starts_with("| method |"));
    let md = std::fs::read_to_string(p.work.join("report.md")).unwrap();
    assert!(md.contains("planted full accuracy"));
    assert!(p.work.join("report.csv").exists());
    assert!(p.work.join("docvecs.dvb.meta.json").exists());
}

#[test]
fn limited_fraction_range_writes_curve() {
    let p = planted();
    for stage in ["ingest", "wsd", "aniso", "gmm", "docvec"] {
        ok(&[stage, "--config", s(&p.config)]);
    }
    ok(&["eval-classify", "--config", s(&p.config), "--fraction", "0.1..0.5"]);
    let curve = std::fs::read_to_string(p.work.join("results/classify_curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "fraction,accuracy,std");
    assert_eq!(lines.len(), 7);
    assert!(
        lines[6].starts_with("1,") || lines[6].starts_with("1.0,"),
        "{}",
        lines[6]
    );
}

#[test]
fn report_merges_protocols() {
    let p = planted();
    for stage in ["ingest", "wsd", "aniso", "gmm", "docvec"] {
        ok(&[stage, "--config", s(&p.config)]);
    }
    ok(&["eval-classify", "--config", s(&p.config), "--fraction", "1.0"]);
    ok(&["eval-fewshot", "--config", s(&p.config), "--shots", "5"]);

    let pairs = p.work.join("sts_pairs.jsonl");
    let rows: Vec<String> = (0..12u64)
        .map(|i| {
            json!({"year": format!("{}", 2012 + (i % 2)), "a": i, "b": i + 1 + (i % 3), "gold": (i % 5) as f64})
                .to_string()
        })
        .collect();
    std::fs::write(&pairs, rows.join("\n")).unwrap();
    ok(&["eval-sts", "--config", s(&p.config), "--pairs", s(&pairs)]);

    let results = p.work.join("results");
    let inputs = ["classify-full.json", "fewshot-5.json", "sts.json"].map(|f| results.join(f));
    let out = p.work.join("merged");
    let md = ok(&["report", s(&inputs[0]), s(&inputs[1]), s(&inputs[2]), "--out", s(&out)]);
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines.len(), 3, "{md}");
    assert!(lines[0].contains("planted full accuracy"));
    assert!(lines[0].contains("planted 5-shot accuracy"));
    assert!(lines[0].contains("pearson_avg"));
    assert!(out.join("report.md").exists());
    assert!(out.join("report.csv").exists());
}

#[test]
fn exit_codes() {
    let p = planted();
    // bad argument value
    let out = run(&["wsd", "--config", s(&p.config), "--tau", "2.0"]);
    assert_eq!(out.status.code(), Some(2));
    // missing artifact names the stage that produces it
    let out = run(&["gmm", "--config", s(&p.config)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("senses.jsonl; run the `wsd` stage first"), "{err}");
    // unreadable input
    let out = run(&[
        "ingest",
        "--config",
        s(&p.config),
        "--corpus",
        "/nonexistent/corpus.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(3));
    // constant gold scores have no correlation
    for stage in ["ingest", "wsd", "aniso", "gmm", "docvec"] {
        ok(&[stage, "--config", s(&p.config)]);
    }
    let pairs = p.work.join("flat.jsonl");
    let rows: Vec<String> = (0..6u64)
        .map(|i| json!({"year": "2015", "a": i, "b": i + 1, "gold": 3.0}).to_string())
        .collect();
    std::fs::write(&pairs, rows.join("\n")).unwrap();
    let out = run(&["eval-sts", "--config", s(&p.config), "--pairs", s(&pairs)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
