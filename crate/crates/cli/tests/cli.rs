use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sidestream"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let counts: serde_json::Map<String, Value> =
        ["Map", "Filter", "Join", "Max", "Average", "AveragePartition", "Count"].iter().map(|k| (k.to_string(), json!(24))).collect();
    let cfg = json!({
        "version": 1,
        "seed": 11,
        "profile": { "counts": counts, "events": 1500 },
        "featurizer": { "k": 64 },
        "model": {
            "grid": { "family": "random_forest", "n_estimators": [10, 20], "max_depth": [null], "max_features": ["sqrt"], "bootstrap": [true] },
            "folds": 2
        },
        "suite_per_kind": 1,
        "queries": ["Q1", "Q2"]
    });
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read_csv(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(str::to_owned).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()));
    rows
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    for step in ["generate", "profile", "featurize", "train", "attack", "mitigate", "report"] {
        ok(run(&cfg, &out, &[step]));
    }
    for f in ["data/bids.jsonl", "traces.jsonl", "dataset.csv", "model/classifier.json", "cv.csv", "recovered_query.json", "qrsr.csv", "mitigation.json", "report/confusion.csv", "report/cdf_Filter.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    // Every checksum in the manifest matches the file on disk.
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let steps = m["steps"].as_object().unwrap();
    assert_eq!(steps.len(), 7);
    for step in steps.values() {
        assert_eq!(step["config"]["seed"], 11);
        for (name, entry) in step["files"].as_object().unwrap() {
            let bytes = std::fs::read(out.join(name)).unwrap();
            assert_eq!(entry["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)), "{name}");
        }
    }

    // Generated counts are honored.
    let lines = |f: &str| std::fs::read_to_string(out.join(f)).unwrap().lines().count();
    assert_eq!(lines("data/persons.jsonl"), 40);
    assert_eq!(lines("data/auctions.jsonl"), 4000);
    assert_eq!(lines("traces.jsonl"), 7 * 24);

    // Recovery covers every stage of each victim.
    let rq: Value = serde_json::from_str(&std::fs::read_to_string(out.join("recovered_query.json")).unwrap()).unwrap();
    let stages: Vec<usize> = rq.as_array().unwrap().iter().map(|q| q["stages"].as_array().unwrap().len()).collect();
    assert_eq!(stages, vec![1, 2]);

    // Confusion rows sum to class support.
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report/metrics.json")).unwrap()).unwrap();
    let conf = read_csv(&out.join("report/confusion.csv"));
    for (row, pc) in conf[1..].iter().zip(metrics["per_class"].as_array().unwrap()) {
        let sum: u64 = row[1..].iter().map(|v| v.parse::<u64>().unwrap()).sum();
        assert_eq!(sum, pc["support"].as_u64().unwrap());
    }

    // CDF curves rise monotonically to one.
    let cdf = read_csv(&out.join("report/cdf_Map.csv"));
    assert_eq!(cdf[0], ["x", "y"]);
    let ys: Vec<f64> = cdf[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(ys.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*ys.last().unwrap(), 1.0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        for step in ["generate", "profile", "featurize"] {
            ok(run(&cfg, out, &[step]));
        }
    }
    for f in ["data/persons.jsonl", "data/bids.jsonl", "data/flights.jsonl", "traces.jsonl", "dataset.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // A different seed changes the traces.
    ok(bin().args(["profile", "--seed", "12", "--config"]).arg(&cfg).arg("--out").arg(&b).output().unwrap());
    assert_ne!(std::fs::read(a.join("traces.jsonl")).unwrap(), std::fs::read(b.join("traces.jsonl")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let code = |o: Output| o.status.code().unwrap();

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"version\": 7}").unwrap();
    assert_eq!(code(run(&bad, &out, &["generate"])), 2);
    std::fs::write(&bad, "{\"seeed\": 1}").unwrap();
    assert_eq!(code(run(&bad, &out, &["generate"])), 2);
    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(code(run(&bad, &out, &["generate"])), 2);
    assert_eq!(code(bin().args(["generate", "--mode", "fast"]).output().unwrap()), 2);
    assert_eq!(code(bin().args(["attack", "--query", "Q9"]).output().unwrap()), 2);
    assert_eq!(code(bin().arg("frobnicate").output().unwrap()), 2);

    let cfg = small_config(dir.path());
    for step in ["report", "featurize", "train", "attack", "mitigate"] {
        let o = run(&cfg, &out, &[step]);
        assert_eq!(code(o), 3, "{step}");
    }
}

#[test]
fn config_subcommand_prints_effective_config() {
    let o = ok(bin().args(["config", "--seed", "5", "--setting", "2", "--model", "gbt"]).output().unwrap());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["version"], 1);
    assert_eq!(v["seed"], 5);
    assert_eq!(v["setting"], "leave_one_query_out");
    assert_eq!(v["model"]["grid"]["family"], "gradient_boosted_trees");
}
