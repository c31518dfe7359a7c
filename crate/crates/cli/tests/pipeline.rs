use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regolith_cli::write_fixture;
use regolith_core::metrics::REPORT_CSV_HEADER;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic12")
}

fn regolith(args: &[&str], out: &Path) -> Output {
    let fx = fixture();
    Command::new(env!("CARGO_BIN_EXE_regolith"))
        .args(args)
        .arg("--input")
        .arg(&fx)
        .arg("--config")
        .arg(fx.join("regolith.conf"))
        .arg("--out")
        .arg(out)
        .args(["--threads", "1", "--set", "train.steps=20"])
        .env("REGOLITH_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bundled_fixture_matches_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(fixture()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut generated: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    generated.sort();
    assert_eq!(names, generated);
    for n in names {
        assert_eq!(fs::read(fixture().join(&n)).unwrap(), fs::read(dir.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = regolith(&["run"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    for a in [
        "images/manifest.json",
        "sparse/cameras.txt",
        "sparse/images.txt",
        "sparse/points3D.txt",
        "sparse/points.ply",
        "transforms.json",
        "sfm.json",
        "splats.ply",
        "splats.json",
        "report.csv",
        "report.md",
        "timings.csv",
    ] {
        assert!(out.join(a).is_file(), "missing {a}");
    }
    assert!(fs::read_dir(out.join("renders")).unwrap().count() > 0);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(REPORT_CSV_HEADER));
    let columns = REPORT_CSV_HEADER.split(',').count();
    assert!(lines.clone().count() > 0);
    assert!(lines.all(|l| l.split(',').count() == columns), "{csv}");
    let timings = fs::read_to_string(out.join("timings.csv")).unwrap();
    for stage in ["ingest", "sfm", "train", "render", "evaluate"] {
        assert!(timings.lines().any(|l| l.starts_with(&format!("{stage},"))), "{timings}");
    }
}

#[test]
fn missing_input_fails_in_config_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_regolith"))
        .args(["run", "--out"])
        .arg(&out)
        .env("REGOLITH_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[config]"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_regolith"))
        .args(["sfm", "--set", "sfm.nonsense=1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[config]"), "{}", stderr(&o));
}

#[test]
fn stages_run_one_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for stage in ["ingest", "sfm", "train", "render", "evaluate"] {
        let o = regolith(&[stage], &out);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    assert!(out.join("report.csv").is_file());
    let timings = fs::read_to_string(out.join("timings.csv")).unwrap();
    assert!(timings.lines().any(|l| l.starts_with("evaluate,")));
}

#[test]
fn stage_without_its_inputs_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = regolith(&["train"], &dir.path().join("empty"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[train]"), "{}", stderr(&o));
}

#[test]
fn compare_reports_reductions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = regolith(&["compare", "--strategies", "exhaustive,sequential"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{csv}");
    assert!(rows[0].contains("\"exhaustive\"") && rows[1].contains("\"sequential(w=5)\""));
    // 12 frames: 66 exhaustive pairs, 45 within a window of 5
    let pairs: Vec<&str> = rows.iter().map(|r| r.split(',').nth(2).unwrap()).collect();
    assert_eq!(pairs, ["66", "45"]);
    assert!(rows[1].split(',').nth(8).unwrap().starts_with("31.8"), "{csv}");
    assert!(out.join("comparison.md").is_file());
}

#[test]
fn compare_needs_two_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let o = regolith(&["compare", "--strategies", "sequential"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 2"), "{}", stderr(&o));
}

#[test]
fn failing_render_keeps_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = regolith(&["run", "--set", "holdout_every=100"], &out);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("[render]"), "{}", stderr(&o));
    assert!(out.join("sfm.json").is_file());
    assert!(out.join("splats.ply").is_file());
    assert!(!out.join("report.csv").exists());
}

#[test]
fn non_convergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = regolith(&["run", "--set", "sfm.min_pair_inliers=100000"], &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let sfm: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sfm.json")).unwrap()).unwrap();
    assert_eq!(sfm["report"]["converged"], serde_json::Value::Bool(false), "{sfm}");
    assert!(out.join("report.md").is_file());
}
