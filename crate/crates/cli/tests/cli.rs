use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eurnet::graphbuild::PatchGrid;
use eurnet::tensor::Tensor;
use serde_json::Value;

fn eurnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eurnet")).args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn toy_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy_kinship")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn tripeptide_has_nineteen_edges_and_virtual_rows() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("g");
    let o = eurnet(&["build-graph", "protein", "--input", s(&fixture("tripeptide.txt")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["total"], 19);
    assert_eq!(summary["edges"], 18);

    let reg = read_json(&out.join("registry.json"));
    let counts: Vec<u64> = reg["relations"].as_array().unwrap().iter().map(|r| r["edges"].as_u64().unwrap()).collect();
    assert_eq!(counts, [1, 2, 3, 2, 1, 6, 0, 0, 3]);
    assert_eq!(reg["virtual_nodes"].as_array().unwrap().len(), 1);

    let tsv = std::fs::read_to_string(out.join("edges.tsv")).unwrap();
    assert_eq!(tsv.lines().filter(|l| !l.starts_with('#')).count(), 18);
    assert!(out.join("config.toml").exists());
}

#[test]
fn image_grid_without_medium_edges_keeps_short_and_long() {
    let d = tempfile::tempdir().unwrap();
    let grid_path = d.path().join("grid.bin");
    let feats = Tensor::new(vec![16, 3], (0..48).map(|i| i as f32 * 0.1).collect()).unwrap();
    let grid = PatchGrid::new(4, 4, feats).unwrap();
    let mut bytes = Vec::new();
    grid.write_binary(&mut bytes).unwrap();
    std::fs::write(&grid_path, bytes).unwrap();

    let out = d.path().join("g");
    let o = eurnet(&["build-graph", "image", "--input", s(&grid_path), "--medium-k", "0", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reg = read_json(&out.join("registry.json"));
    let by_range = |range: &str| -> u64 {
        reg["relations"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["range"] == range)
            .map(|r| r["edges"].as_u64().unwrap())
            .sum()
    };
    assert_eq!(by_range("short"), 48);
    assert_eq!(by_range("medium"), 0);
    assert!(!reg["long_edge_spec"].is_null());
    assert_eq!(reg["virtual_nodes"].as_array().unwrap().len(), 17);
}

#[test]
fn empty_kg_is_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    let empty = d.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let o = eurnet(&["build-graph", "kg", "--input", s(&empty), "--out", s(&d.path().join("g"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn malformed_protein_reports_the_line() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.txt");
    std::fs::write(&bad, "0 A 0 0 0\n1 A 1 x 0\n").unwrap();
    let o = eurnet(&["build-graph", "protein", "--input", s(&bad), "--out", s(&d.path().join("g"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":2") || err.contains("line 2"), "{err}");
}

#[test]
fn flops_sweep_rows_and_marginals() {
    let d = tempfile::tempdir().unwrap();
    let csv = d.path().join("flops.csv");
    let o = eurnet(&["bench-flops", "--k-min", "1", "--k-max", "24", "--out", s(&csv)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<u64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 24);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i as u64 + 1);
        assert_eq!(r[3], rows[0][3]);
        assert_eq!(r[4], rows[0][4]);
        assert!(r[4] < r[3]);
        if r[0] >= 3 {
            assert!(r[2] < r[1], "K = {}", r[0]);
        }
    }
    for w in rows.windows(2) {
        assert_eq!(w[1][1] - w[0][1], rows[0][3]);
        assert_eq!(w[1][2] - w[0][2], rows[0][4]);
    }
}

#[test]
fn bad_sweep_range_is_a_usage_error() {
    let o = eurnet(&["bench-flops", "--k-min", "5", "--k-max", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(eurnet(&["verify", "--suite", "nope"]).status.code(), Some(2));
    assert_eq!(eurnet(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn verify_passes_and_writes_a_report() {
    let d = tempfile::tempdir().unwrap();
    let report = d.path().join("report.json");
    let o = eurnet(&["verify", "--transforms", "10", "--out", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let r = read_json(&report);
    assert_eq!(r["passed"], true);
    assert_eq!(r["suites"].as_array().unwrap().len(), 4);
}

#[test]
fn injected_fault_fails_flops_exact() {
    let o = eurnet(&["verify", "--suite", "flops-exact", "--inject-fault", "grmp-constant"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[flops]\nk_max = 4\n").unwrap();
    let csv = d.path().join("f.csv");
    let o = eurnet(&["bench-flops", "--config", s(&cfg), "--k-max", "6", "--out", s(&csv)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 7);

    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"five\"\n").unwrap();
    assert_eq!(eurnet(&["bench-flops", "--config", s(&bad)]).status.code(), Some(2));
}

#[test]
fn zero_epochs_gives_baseline_metrics_only() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("run");
    let o = eurnet(&["train-kg", "--data", s(&toy_data()), "--epochs", "0", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(history.lines().skip(1).all(|l| l.starts_with("0,")));
    assert!(!history.contains("loss"));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let names: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(names, ["mr", "mrr", "hits@1", "hits@3", "hits@10"]);
}

#[test]
fn same_seed_gives_identical_files_and_eval_reproduces_them() {
    let d = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = d.path().join(name);
        let o = eurnet(&["train-kg", "--data", s(&toy_data()), "--epochs", "1", "--seed", "3", "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["history.csv", "metrics.csv", "model.params"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let e = d.path().join("eval");
    let o = eurnet(&["eval", "kg", "--data", s(&toy_data()), "--model", s(&a), "--out", s(&e)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(e.join("metrics.csv")).unwrap(), std::fs::read(a.join("metrics.csv")).unwrap());
}

#[test]
fn fmax_from_files() {
    let d = tempfile::tempdir().unwrap();
    let preds = d.path().join("p.csv");
    let labels = d.path().join("l.csv");
    std::fs::write(&preds, "p1,go1,0.9\np1,go2,0.2\np2,go1,0.4\np2,go2,0.8\n").unwrap();
    std::fs::write(&labels, "p1,go1,1\np1,go2,0\np2,go1,0\np2,go2,1\n").unwrap();
    let o = eurnet(&["eval", "fmax", "--predictions", s(&preds), "--labels", s(&labels)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "fmax,1");
}

#[test]
fn bundled_kinship_matches_the_generator() {
    let d = tempfile::tempdir().unwrap();
    let o = eurnet(&["gen-toy-kg", "--seed", "0", "--out", s(d.path())]);
    assert!(o.status.success());
    for f in ["train.tsv", "valid.tsv", "test.tsv"] {
        assert_eq!(
            std::fs::read_to_string(d.path().join(f)).unwrap(),
            std::fs::read_to_string(toy_data().join(f)).unwrap(),
            "{f}"
        );
    }
}
