use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use darktrap::scenario::Scenario;
use darktrap::trace::Trace;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_darktrap"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn darktrap")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a bundled scenario with JSON pointer overrides applied.
fn scenario_file(dir: &Path, base: &str, edits: &[(&str, Value)]) -> PathBuf {
    let mut v: Value = serde_json::from_str(&Scenario::bundled(base).unwrap().to_json()).unwrap();
    for (ptr, val) in edits {
        *v.pointer_mut(ptr).unwrap_or_else(|| panic!("no field {ptr}")) = val.clone();
    }
    let path = dir.join(format!("{base}_edit.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn short(dir: &Path, ms: f64) -> PathBuf {
    scenario_file(dir, "default", &[("/run/duration_ms", json!(ms))])
}

fn only_file(dir: &Path, suffix: &str) -> PathBuf {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    assert_eq!(found.len(), 1, "files ending in {suffix}: {found:?}");
    found.pop().unwrap()
}

#[test]
fn simulate_then_analyze_both_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = short(tmp.path(), 6.0);
    let scn = scn.to_str().unwrap();
    for fmt in ["bin", "csv"] {
        let out = tmp.path().join(fmt);
        let o = run(&["simulate", "-s", scn, "-o", out.to_str().unwrap(), "--format", fmt, "--seed", "5"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let trace_path = only_file(&out, &format!(".{fmt}"));
        let trace = Trace::load(&trace_path).unwrap();
        assert_eq!(trace.record.seed, 5);
        assert!(!trace.record.is_empty());

        let ana = tmp.path().join(format!("{fmt}_analysis"));
        let o = run(&["analyze", "-s", scn, "-o", ana.to_str().unwrap(), trace_path.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        only_file(&ana, "_criteria.csv");
        only_file(&ana, "_psd.csv");
        only_file(&ana, "_pdf.csv");
        let summary = std::fs::read_to_string(only_file(&ana, "_summary.txt")).unwrap();
        assert!(summary.contains("unimodal"), "{summary}");
    }
    let a = Trace::load(&only_file(&tmp.path().join("bin"), ".bin")).unwrap();
    let b = Trace::load(&only_file(&tmp.path().join("csv"), ".csv")).unwrap();
    assert_eq!(a.record.len(), b.record.len());
    assert_eq!(a.scenario_sha256, b.scenario_sha256);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = short(tmp.path(), 2.0);
    let bytes = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = run(&["simulate", "-s", scn.to_str().unwrap(), "-o", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(only_file(&out, ".bin")).unwrap()
    };
    let a = bytes("a", "9");
    assert_eq!(a, bytes("b", "9"));
    assert_ne!(a, bytes("c", "10"));
}

#[test]
fn zero_duration_writes_empty_record() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = short(tmp.path(), 0.0);
    let out = tmp.path().join("o");
    let o = run(&["simulate", "-s", scn.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = Trace::load(&only_file(&out, ".bin")).unwrap();
    assert_eq!(t.record.len(), 0);
}

#[test]
fn malformed_scenario_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = scenario_file(tmp.path(), "default", &[("/run/duration_ms", json!("long"))]);
    let o = run(&["simulate", "-s", scn.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("run.duration_ms"), "{}", stderr(&o));
}

#[test]
fn missing_trace_is_invalid_input() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.bin");
    let o = run(&["analyze", "-o", tmp.path().to_str().unwrap(), missing.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_figure_lists_valid_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "fig9", "-o", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("fig4, fig5"), "{}", stderr(&o));
}

#[test]
fn unknown_scenario_is_invalid_input() {
    let o = run(&["design", "-s", "no_such_scenario"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("drift"), "{}", stderr(&o));
}

#[test]
fn lost_particle_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = scenario_file(
        tmp.path(),
        "default",
        &[
            ("/controller", json!({ "kind": "zero" })),
            ("/run/duration_ms", json!(20.0)),
            ("/run/escape_radius_um", json!(0.05)),
        ],
    );
    let out = tmp.path().join("o");
    let o = run(&["simulate", "-s", scn.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    // The trace is still written so the escape can be inspected.
    let t = Trace::load(&only_file(&out, ".bin")).unwrap();
    assert!(matches!(t.record.status, darktrap_core::dynamics::RunStatus::ParticleLost { .. }));
}

#[test]
fn indefinite_weights_fail_synthesis() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = scenario_file(tmp.path(), "default", &[("/controller/q_z", json!(-1.0e6))]);
    let o = run(&["design", "-s", scn.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn design_reports_estimator_and_gains() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let o = run(&["design", "-s", "drift", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = std::fs::read_to_string(only_file(&out, "non_adaptive_1d.design.txt")).unwrap();
    assert!(report.contains("tau"), "{report}");
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 6);
}
