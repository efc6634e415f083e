mod common;

use std::fs;
use std::process::{Command, Output};

use common::fixture;
use serde_json::Value;

fn boxreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxreg")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn metric_prints_json() {
    let out = boxreg(&["metric", "--kind", "iou", "--gt", "0,0,10,10", "--prd", "0,0,10,10"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["value"], 1.0);
    assert!(v["terms"]["union"].is_number());
}

#[test]
fn metric_mpdiou_example() {
    let out = boxreg(&["metric", "--kind", "mpdiou", "--gt", "0,0,10,10", "--prd", "5,5,15,15", "--img", "20,20"]);
    assert_eq!(out.status.code(), Some(0));
    let value = stdout_json(&out)["value"].as_f64().unwrap();
    assert!((value - 0.017857142857142856).abs() < 1e-12, "{value}");
}

#[test]
fn usage_errors_exit_2() {
    let cases: &[&[&str]] = &[
        &["metric", "--kind", "mpdiou", "--gt", "0,0,10,10", "--prd", "5,5,15,15"],
        &["metric", "--kind", "iou", "--gt", "0,0,10", "--prd", "5,5,15,15"],
        &["metric", "--kind", "nope", "--gt", "0,0,10,10", "--prd", "5,5,15,15"],
        &["verify", "--suite", "theorem", "--samples", "0"],
        &["verify", "--suite", "other"],
        &[],
    ];
    for args in cases {
        let out = boxreg(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn metric_error_exits_1() {
    let out = boxreg(&["metric", "--kind", "iou", "--gt", "0,0,0,10", "--prd", "5,5,15,15"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero area"));
}

#[test]
fn loss_and_grad() {
    let out = boxreg(&["loss", "--kind", "giou", "--gt", "0,0,10,10", "--prd", "20,0,30,10"]);
    assert_eq!(out.status.code(), Some(0));
    // IoU 0, enclosure 300, union 200.
    let l = stdout_json(&out)["loss"].as_f64().unwrap();
    assert!((l - (1.0 + 1.0 / 3.0)).abs() < 1e-15);

    let out = boxreg(&["grad", "--kind", "mpdiou", "--gt", "0,0,10,10", "--prd", "2,3,13,12", "--img", "20,20"]);
    assert_eq!(out.status.code(), Some(0));
    let g = &stdout_json(&out)["gradient"];
    for k in ["d_x1", "d_y1", "d_x2", "d_y2"] {
        assert!(g[k].is_number(), "{k}");
    }
}

#[test]
fn verify_suites() {
    let out = boxreg(&["verify", "--suite", "theorem", "--samples", "1000", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["passed"], true);

    let out = boxreg(&["verify", "--suite", "bounds", "--samples", "2000", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["report"]["violations"], 0);
    assert_eq!(v["report"]["img"]["w"], 640.0);
}

#[test]
fn verify_failure_exits_1_with_counterexample() {
    let out = boxreg(&["verify", "--suite", "theorem", "--samples", "200", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["passed"], false);
    assert!(v["counterexample"]["prd"].is_array());
}

#[test]
fn evaluate_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("summary.csv");
    let out = boxreg(&["evaluate", "--data", fixture("micro.json").to_str().unwrap(), "--metric", "iou", "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let iou_map = stdout_json(&out)["map"].as_f64().unwrap();
    assert!(fs::read_to_string(&csv).unwrap().starts_with("category,measure,threshold,value"));

    let out = boxreg(&["evaluate", "--data", fixture("micro.json").to_str().unwrap(), "--metric", "mpdiou"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_json(&out)["map"].as_f64().unwrap() <= iou_map);

    let out = boxreg(&["evaluate", "--data", fixture("perfect.json").to_str().unwrap()]);
    assert_eq!(stdout_json(&out)["map"], 1.0);
}

#[test]
fn evaluate_missing_or_bad_file_exits_1() {
    let out = boxreg(&["evaluate", "--data", "/nonexistent/data.json"]);
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"images":[{"image_id":"a","width":"wide","height":1,"ground_truth":[]}],"detections":[]}"#).unwrap();
    let out = boxreg(&["evaluate", "--data", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/images/0/width"));
}

#[test]
fn simulate_writes_csvs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = boxreg(&["simulate", "--config", fixture("simulate.json").to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        stdout_json(&out);
        out_dir
    };
    let a = run("a");
    let mut files: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["nonoverlapping_giou.csv", "nonoverlapping_mpdiou.csv", "summary.json"]);

    let b = run("b");
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let summary: Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert!(summary["protocol_note"].as_str().unwrap().contains("Implementer-defined"));
    assert_eq!(summary["families"][0]["stats"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"img":{"w":100,"h":100},"families":[{"family":"overlapping","n_cases":2}],"kinds":["giou","fastest"]}"#,
    )
    .unwrap();
    let out = boxreg(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kinds[1]"), "{err}");
    assert!(out.stdout.is_empty());
}
