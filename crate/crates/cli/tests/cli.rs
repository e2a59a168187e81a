use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::Value;

use projwass::{GroundSpace, ProbVector};
use projwass_cli::ingest::{emit_histogram, ingest, write_histogram, DatasetSpec, Source};

fn projwass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_projwass")).args(args).output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn iprw_on_synthetic_histograms() {
    let v = report(&projwass(&["iprw", "--x", "grid:3:1", "--y", "grid:3:2", "--frames", "32", "--seed", "5"]));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["seeds"]["seed"], 5);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    let d = v["results"]["distance"].as_f64().unwrap();
    assert!(d > 0.0);
    let same = report(&projwass(&["iprw", "--x", "grid:3:1", "--y", "grid:3:1", "--frames", "32"]));
    assert!(same["results"]["distance"].as_f64().unwrap() < 1e-12);
}

#[test]
fn reports_are_reproducible() {
    let args = ["test", "--x", "grid:3:1:300", "--y", "grid:3:2:300", "--B", "40", "--frames", "16", "--seed", "3"];
    let a = report(&projwass(&args));
    let b = report(&projwass(&args));
    assert_eq!(a["results"], b["results"]);
    assert_eq!(a["config_hash"], b["config_hash"]);
    let c = report(&projwass(&[
        "test", "--x", "grid:3:1:300", "--y", "grid:3:2:300", "--B", "40", "--frames", "16", "--seed", "4",
    ]));
    assert_ne!(a["config_hash"], c["config_hash"]);
}

#[test]
fn test_command_on_csv_samples() {
    let dir = tempfile::tempdir().unwrap();
    let support = dir.path().join("support.csv");
    write(&support, "0,0\n0,1\n1,0\n1,1\n");
    let x = dir.path().join("x.csv");
    let y = dir.path().join("y.csv");
    let rows = |pattern: &[&str], reps: usize| pattern.iter().cycle().take(reps).map(|r| format!("{r}\n")).collect::<String>();
    write(&x, &rows(&["0,0", "0,1", "1,0", "1,1"], 200));
    write(&y, &rows(&["1,1", "1,1", "1,1", "0,0"], 200));
    let out = projwass(&[
        "test",
        "--x",
        x.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--support",
        support.to_str().unwrap(),
        "--B",
        "99",
        "--ell-rule",
        "n^2/3",
    ]);
    let v = report(&out);
    assert_eq!(v["results"]["reject"], true);
    assert_eq!(v["results"]["ell"], 34);
    assert!(v["results"]["p_value"].as_f64().unwrap() <= 0.01 + 1e-12);

    let quantized = report(&projwass(&[
        "iprw",
        "--x",
        x.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--quantize",
        "0:1:2",
    ]));
    assert!(quantized["results"]["distance"].as_f64().unwrap() > 0.0);
}

#[test]
fn input_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    write(&bad, r#"{"points": [[0.0], [1.0]], "weights": [0.2, 0.2]}"#);
    let out = projwass(&["iprw", "--x", bad.to_str().unwrap(), "--y", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum"));

    let x = dir.path().join("x.csv");
    write(&x, "0.5\n");
    let out = projwass(&["iprw", "--x", x.to_str().unwrap(), "--y", x.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(projwass(&["experiment", "no-such-protocol"]).status.code(), Some(2));
    assert_eq!(projwass(&["test", "--x", "grid:3:1", "--y", "grid:3:2"]).status.code(), Some(2));
    assert_eq!(projwass(&["test", "--x", "grid:3:1:50", "--y", "grid:3:2:50", "--B", "5"]).status.code(), Some(2));
    assert_eq!(projwass(&["iprw", "--x", "grid:3:1", "--y", "slab:3:1"]).status.code(), Some(2));
    assert_eq!(projwass(&["iprw", "--nope"]).status.code(), Some(2));
}

#[test]
fn prw_and_ci_commands() {
    let v = report(&projwass(&["prw", "--x", "slab:3:1", "--y", "slab:3:2", "--restarts", "3"]));
    let d = v["results"]["distance"].as_f64().unwrap();
    assert!(d > 0.0);
    assert_eq!(v["results"]["best_frame_columns"][0].as_array().unwrap().len(), 3);

    let v = report(&projwass(&[
        "ci", "--x", "slab:2:1:200", "--y", "slab:2:2:200", "--B", "20", "--restarts", "2", "--alpha", "0.1",
    ]));
    let (lo, hi) = (v["results"]["lower"].as_f64().unwrap(), v["results"]["upper"].as_f64().unwrap());
    assert!(lo <= hi);
    assert_eq!(v["results"]["replicates"], 20);
}

#[test]
fn experiment_writes_report_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, r#"{"reps": 50, "limit_draws": 100, "frames": 8}"#);
    let out_dir = dir.path().join("run");
    let out = projwass(&[
        "experiment",
        "iprw-null-convergence",
        "--config",
        cfg.to_str().unwrap(),
        "--n-list",
        "10,40",
        "--L",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "finite_draws.csv", "limit_draws.csv", "qq.csv", "ks_vs_n.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["config"]["settings"]["reps"], 50);
    assert_eq!(v["results"]["rows"].as_array().unwrap().len(), 2);
    let ks = std::fs::read_to_string(out_dir.join("ks_vs_n.csv")).unwrap();
    assert_eq!(ks.lines().count(), 3);
    assert_eq!(ks.lines().next(), Some("n,ks"));
}

#[test]
fn bootstrap_compare_emits_one_table_per_rule() {
    let dir = tempfile::tempdir().unwrap();
    let out = projwass(&[
        "experiment",
        "bootstrap-compare",
        "--L",
        "3",
        "--n-list",
        "100",
        "--reps",
        "50",
        "--limit-draws",
        "50",
        "--B",
        "30",
        "--frames",
        "8",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["bootstrap_n.csv", "bootstrap_n4_5.csv", "bootstrap_n2_3.csv", "bootstrap_n1_2.csv", "ks.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn histogram_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.json");
    let space = GroundSpace::thin_slab(2).unwrap();
    let r = ProbVector::from_masses(&[0.1, 0.2, 0.3, 0.4, 1.0 / 3.0, 0.05, 0.07, 0.0]).unwrap();
    write_histogram(&path, &space, &r).unwrap();
    let back = ingest(&DatasetSpec::new(Source::HistogramJson { path })).unwrap();
    assert_eq!(back.space, space);
    assert_eq!(back.histogram().unwrap(), r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emit_then_ingest_is_exact(
        masses in prop::collection::vec(0.0f64..10.0, 1..30),
        coords in prop::collection::vec(-1e3f64..1e3, 30),
    ) {
        prop_assume!(masses.iter().sum::<f64>() > 0.0);
        let r = ProbVector::from_masses(&masses).unwrap();
        let points: Vec<Vec<f64>> = (0..masses.len()).map(|i| vec![coords[i], i as f64]).collect();
        let space = GroundSpace::new(points).unwrap();
        let mut buf = Vec::new();
        emit_histogram(&space, &r, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        std::fs::write(&path, &buf).unwrap();
        let back = ingest(&DatasetSpec::new(Source::HistogramJson { path })).unwrap();
        prop_assert_eq!(&back.space, &space);
        prop_assert_eq!(back.histogram().unwrap(), r);
    }
}
