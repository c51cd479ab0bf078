use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn rgbdslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgbdslam"))
        .args(args)
        .env("RGBDSLAM_LOG", "info")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rgbdslam(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_line(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    stderr
        .lines()
        .filter(|l| l.starts_with("ERROR "))
        .last()
        .unwrap_or_default()
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, path: &Path) -> Value {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{} violates its schema: {errors:?}", path.display());
    doc
}

fn without_timings(mut report: Value) -> Value {
    report.as_object_mut().unwrap().remove("timings");
    report
}

#[test]
fn simulate_reconstruct_evaluate_room_orbit() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let run = dir.path().join("run");
    ok(&["simulate", "--preset", "room", "--orbit", "60", "--seed", "7", "--out", p(&seq)]);
    ok(&["reconstruct", p(&seq), "--out", p(&run)]);
    let gt = seq.join("groundtruth.txt");
    ok(&["evaluate", p(&run), "--gt", p(&gt)]);

    for f in ["map.ply", "trajectory.txt", "graph.txt", "report.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let run_report = assert_valid(&schema("run_report.schema.json"), &run.join("report.json"));
    assert_eq!(run_report["frame_count"], 60);
    let eval = assert_valid(&schema("evaluation_report.schema.json"), &run.join("evaluation/report.json"));
    let ate = eval["trajectory"]["ate_rmse"].as_f64().expect("ATE present");
    assert!(ate < 0.05, "ATE {ate}");
    let planes = eval["planes"].as_array().unwrap();
    assert!(planes.iter().any(|p| p["region"] == "wall_34"));
    for plane in planes {
        let name = plane["region"].as_str().unwrap();
        assert!(dir.path().join("run/evaluation").join(format!("error_map_{name}.csv")).is_file());
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["simulate", "--preset", "room", "--orbit", "6", "--seed", "3", "--out", p(&seq)]);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        ok(&["reconstruct", p(&seq), "--out", p(&run), "--seed", "3"]);
        ok(&["evaluate", p(&run), "--gt", p(&seq.join("groundtruth.txt"))]);
        outputs.push((
            std::fs::read(run.join("trajectory.txt")).unwrap(),
            std::fs::read(run.join("graph.txt")).unwrap(),
            without_timings(serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap()),
            std::fs::read(run.join("evaluation/report.json")).unwrap(),
        ));
    }
    assert!(outputs[0] == outputs[1], "runs differ");
}

#[test]
fn reconstruct_on_empty_directory_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rgbdslam(&["reconstruct", p(dir.path()), "--out", p(&dir.path().join("run"))]);
    assert!(!out.status.success());
    assert!(error_line(&out).starts_with("ERROR format "), "{}", error_line(&out));
}

#[test]
fn unknown_region_lists_known_regions() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let run = dir.path().join("run");
    ok(&["simulate", "--preset", "room", "--orbit", "2", "--out", p(&seq)]);
    ok(&["reconstruct", p(&seq), "--out", p(&run)]);
    let out = rgbdslam(&[
        "evaluate",
        p(&run),
        "--gt",
        p(&seq.join("groundtruth.txt")),
        "--region",
        "wall_99",
    ]);
    assert!(!out.status.success());
    let line = error_line(&out);
    assert!(line.starts_with("ERROR parameter "), "{line}");
    assert!(line.contains("wall_12") && line.contains("wall_34"), "{line}");
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&["frobnicate"][..], &["reconstruct", "--bogus-flag"][..], &[][..]] {
        let out = rgbdslam(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(error_line(&out).starts_with("ERROR usage "), "{args:?}: {}", error_line(&out));
    }
}

#[test]
fn unknown_preset_is_parameter_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rgbdslam(&["simulate", "--preset", "castle", "--orbit", "2", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("ERROR parameter "));
}

#[test]
fn optimize_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let run = dir.path().join("run");
    ok(&["simulate", "--preset", "room", "--orbit", "4", "--out", p(&seq)]);
    ok(&["reconstruct", p(&seq), "--out", p(&run)]);
    let optimized = dir.path().join("opt");
    ok(&["optimize", p(&run), "--out", p(&optimized)]);
    assert!(optimized.join("graph.txt").is_file());
    assert!(optimized.join("trajectory.txt").is_file());

    let xyz = dir.path().join("map.xyz");
    ok(&["export", "cloud", p(&run.join("map.ply")), p(&xyz)]);
    let lines = std::fs::read_to_string(&xyz).unwrap().lines().count();
    let report: Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(lines as u64, report["map_points"].as_u64().unwrap());

    let traj = dir.path().join("kf.txt");
    ok(&["export", "graph-trajectory", p(&run.join("graph.txt")), p(&traj)]);
    let kf = std::fs::read_to_string(&traj).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(kf as u64, report["keyframes"].as_u64().unwrap());

    let frame = dir.path().join("frame.ply");
    ok(&["export", "frame", p(&seq), "0", p(&frame)]);
    let out = rgbdslam(&["export", "frame", p(&seq), "99", p(&frame)]);
    assert!(error_line(&out).starts_with("ERROR parameter "));
}
