//! End-to-end runs of the command-line binary.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

use common::fixtures;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rationality-eval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn scores(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write_spec(dir: &Path, groups: Value) -> std::path::PathBuf {
    let path = dir.join("spec.json");
    let spec = json!({ "width": 12, "height": 9, "seed": 5, "groups": groups });
    fs::write(&path, serde_json::to_vec(&spec).unwrap()).unwrap();
    path
}

#[test]
fn planted_cohort_round_trips_through_synth_and_evaluate() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(
        tmp.path(),
        json!([{ "method": "ZS", "tally": { "rr": 1, "rw": 1, "wr": 1, "ww": 1 } }]),
    );
    let cohort = tmp.path().join("cohort");
    let out = run(&["synth", "--spec", s(&spec), "--out", s(&cohort)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let eval = tmp.path().join("eval");
    let manifest = cohort.join("manifest.jsonl");
    let out = run(&["evaluate", "--manifest", s(&manifest), "--out", s(&eval)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let report: Value =
        serde_json::from_slice(&fs::read(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["total_samples"], 4);
    let group = &report["groups"][0];
    assert_eq!(
        group["tally"],
        json!({ "rr": 1, "rw": 1, "wr": 1, "ww": 1 })
    );
    assert_eq!(group["accuracy"], 0.5);
    assert_eq!(group["pt"], 0.5);
    assert_eq!(group["ir"], 0.5);
    let csv = fs::read_to_string(eval.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with(
        "method,corruption,severity,n,rr,rw,wr,ww,accuracy,pt,ir,valid_evidence_rate\n"
    ));
    assert!(csv.contains("ZS,,0,4,1,1,1,1,0.5,0.5,0.5,0.5\n"));
    assert!(fs::read_to_string(eval.join("report.svg"))
        .unwrap()
        .starts_with("<svg"));
    assert_eq!(scores(&eval.join("scores.jsonl")).len(), 4);
}

#[test]
fn empty_manifest_exits_3() {
    let tmp = TempDir::new().unwrap();
    let manifest = tmp.path().join("empty.jsonl");
    fs::write(&manifest, "\n").unwrap();
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn malformed_manifest_exits_2_naming_the_line() {
    let tmp = TempDir::new().unwrap();
    let manifest = fixtures().join("malformed/duplicate_id.jsonl");
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn missing_npy_exits_2_naming_the_sample() {
    let tmp = TempDir::new().unwrap();
    let manifest = tmp.path().join("m.jsonl");
    fs::write(
        &manifest,
        r#"{"sample_id":"ghost","true_class":1,"pred_class":1,"heatmap_path":"nope.npy","bboxes":[[0,0,1,1]],"width":2,"height":2}"#,
    )
    .unwrap();
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("ghost") && err.contains("line 1"), "{err}");
}

#[test]
fn bad_flag_values_exit_2() {
    let tmp = TempDir::new().unwrap();
    let manifest = fixtures().join("capture/manifest.jsonl");
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(tmp.path()),
        "--theta",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(tmp.path()),
        "--attribution",
        "magic",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn attribute_then_evaluate_reproduces_hand_values() {
    let tmp = TempDir::new().unwrap();
    let manifest = fixtures().join("capture/manifest.jsonl");
    let attributed = tmp.path().join("attributed");
    let out = run(&[
        "attribute",
        "--manifest",
        s(&manifest),
        "--out",
        s(&attributed),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_dir(attributed.join("heatmaps")).unwrap().count(),
        2
    );

    let eval = tmp.path().join("eval");
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&attributed.join("manifest.jsonl")),
        "--out",
        s(&eval),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = scores(&eval.join("scores.jsonl"));
    assert_eq!(rows[0]["sample_id"], "box-2x2");
    assert!((rows[0]["rma"].as_f64().unwrap() - 4.0 / 7.0).abs() <= 1e-12);
    assert_eq!(rows[0]["quadrant"], "RR");
    assert_eq!(rows[1]["sample_id"], "mask-4x4");
    assert!((rows[1]["rma"].as_f64().unwrap() - 11.1 / 25.2).abs() <= 1e-12);
    assert_eq!(rows[1]["quadrant"], "WW");
    assert!(!eval.join("report.csv").exists());

    // Evaluating the capture manifest directly gives the same scores.
    let direct = tmp.path().join("direct");
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(&direct),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(rows, scores(&direct.join("scores.jsonl")));
}

#[test]
fn grad_only_boundary_counts_as_valid() {
    let tmp = TempDir::new().unwrap();
    let manifest = fixtures().join("capture/manifest.jsonl");
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(tmp.path()),
        "--attribution",
        "grad_only",
        "--format",
        "csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = scores(&tmp.path().join("scores.jsonl"));
    assert_eq!(rows[0]["rma"], 0.5);
    assert_eq!(rows[0]["quadrant"], "RR");
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("config.json");
    let manifest = fixtures().join("capture/manifest.jsonl");
    fs::write(
        &config,
        serde_json::to_vec(&json!({
            "manifest": manifest,
            "out": tmp.path().join("from-config"),
            "theta": 0.6,
            "formats": ["json"],
        }))
        .unwrap(),
    )
    .unwrap();
    let out = run(&["evaluate", "--config", s(&config)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = scores(&tmp.path().join("from-config/scores.jsonl"));
    assert_eq!(rows[0]["quadrant"], "RW");
    let report: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("from-config/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["threshold"], 0.6);

    let out = run(&[
        "evaluate",
        "--config",
        s(&config),
        "--theta",
        "0.5",
        "--out",
        s(&tmp.path().join("flag")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        scores(&tmp.path().join("flag/scores.jsonl"))[0]["quadrant"],
        "RR"
    );

    fs::write(&config, r#"{"thetaa": 0.6}"#).unwrap();
    let out = run(&["evaluate", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(
        tmp.path(),
        json!([
            { "method": "A", "tally": { "rr": 3, "rw": 2, "wr": 1, "ww": 2 } },
            { "method": "A", "corruption": "fog", "severity": 1, "tally": { "rr": 1, "rw": 2, "wr": 0, "ww": 3 } },
        ]),
    );
    let cohort = tmp.path().join("cohort");
    assert!(run(&["synth", "--spec", s(&spec), "--out", s(&cohort)])
        .status
        .success());
    let manifest = cohort.join("manifest.jsonl");
    let outputs: Vec<Vec<Vec<u8>>> = ["r1", "r2"]
        .iter()
        .zip(["1", "4"])
        .map(|(name, workers)| {
            let dir = tmp.path().join(name);
            let out = run(&[
                "evaluate",
                "--manifest",
                s(&manifest),
                "--out",
                s(&dir),
                "--workers",
                workers,
            ]);
            assert!(out.status.success(), "{}", stderr(&out));
            ["scores.jsonl", "report.json", "report.csv", "report.svg"]
                .iter()
                .map(|f| fs::read(dir.join(f)).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);

    let again = tmp.path().join("cohort2");
    assert!(run(&["synth", "--spec", s(&spec), "--out", s(&again)])
        .status
        .success());
    assert_eq!(
        fs::read(&manifest).unwrap(),
        fs::read(again.join("manifest.jsonl")).unwrap()
    );
}

#[test]
fn sweep_and_report_from_scores() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(
        tmp.path(),
        json!([
            { "method": "A", "tally": { "rr": 2, "rw": 0, "wr": 0, "ww": 0 } },
            { "method": "A", "corruption": "fog", "severity": 1, "tally": { "rr": 1, "rw": 1, "wr": 0, "ww": 0 } },
            { "method": "A", "corruption": "fog", "severity": 2, "tally": { "rr": 0, "rw": 0, "wr": 0, "ww": 2 } },
        ]),
    );
    let cohort = tmp.path().join("cohort");
    assert!(run(&["synth", "--spec", s(&spec), "--out", s(&cohort)])
        .status
        .success());
    let eval = tmp.path().join("eval");
    let manifest = cohort.join("manifest.jsonl");
    assert!(
        run(&["evaluate", "--manifest", s(&manifest), "--out", s(&eval)])
            .status
            .success()
    );

    let sweep = tmp.path().join("sweep");
    let out = run(&[
        "sweep",
        "--scores",
        s(&eval.join("scores.jsonl")),
        "--out",
        s(&sweep),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sweeps: Value =
        serde_json::from_slice(&fs::read(sweep.join("sweeps.json")).unwrap()).unwrap();
    let points = sweeps["sweeps"][0]["points"].as_array().unwrap();
    let severities: Vec<u64> = points
        .iter()
        .map(|p| p["severity"].as_u64().unwrap())
        .collect();
    assert_eq!(severities, [0, 1, 2]);
    assert_eq!(points[1]["pt"], 0.5);
    assert_eq!(points[2]["pt"], Value::Null);
    assert!(points[2]["pt_undefined_reason"].is_string());
    assert!(fs::read_to_string(sweep.join("sweeps.svg"))
        .unwrap()
        .contains("PT (fog)"));

    let report = tmp.path().join("report");
    let out = run(&[
        "report",
        "--scores",
        s(&eval.join("scores.jsonl")),
        "--out",
        s(&report),
        "--format",
        "csv,json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(report.join("report.csv")).unwrap(),
        fs::read(eval.join("report.csv")).unwrap()
    );
    assert_eq!(
        fs::read(report.join("report.json")).unwrap(),
        fs::read(eval.join("report.json")).unwrap()
    );
    let csv = fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(csv.contains("A,fog,2,2,0,0,0,2,0,,,0\n"), "{csv}");
}

#[test]
fn invalid_synth_spec_exits_2() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(
        tmp.path(),
        json!([{ "method": "A", "corruption": "fog", "severity": 0, "tally": { "rr": 1, "rw": 0, "wr": 0, "ww": 0 } }]),
    );
    let out = run(&[
        "synth",
        "--spec",
        s(&spec),
        "--out",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
