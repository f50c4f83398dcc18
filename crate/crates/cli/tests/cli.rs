use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pwsm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwsm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("failed to run pwsm")
}

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_model_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = pwsm(dir.path(), &["find-cycle", "--model", "pendulum"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
}

#[test]
fn library_errors_are_named_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = pwsm(dir.path(), &["find-cycle", "--model", "glass", "--params", "gamma=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("InvalidInput"));
}

#[test]
fn tolerances_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["0", "-1e-9"] {
        let out = pwsm(dir.path(), &["find-cycle", "--model", "1d", "--rtol", bad]);
        assert_eq!(out.status.code(), Some(2), "--rtol {bad}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("must be positive"));
    }
}

#[test]
fn simulate_glass_cycles_through_four_regions() {
    let dir = tempfile::tempdir().unwrap();
    let out = pwsm(dir.path(), &["simulate", "--model", "glass", "--t", "20"]);
    assert!(out.status.success());
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,x1,x2,region\n"));
    let events = fs::read_to_string(dir.path().join("events.csv")).unwrap();
    let hops: Vec<String> = events
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            format!("{}{}", c[2], c[3])
        })
        .collect();
    assert!(hops.len() >= 8);
    for (i, h) in hops.iter().enumerate() {
        assert_eq!(h, ["12", "23", "34", "41"][i % 4]);
    }
}

#[test]
fn iprc_output_is_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(pwsm(a.path(), &["iprc", "--model", "aplysia"]).status.success());
    assert!(pwsm(b.path(), &["--threads", "1", "iprc", "--model", "aplysia"]).status.success());
    for f in ["iprc.csv", "jumps.json", "iprc.svg"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.path().join("iprc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2001);
    assert!(csv.starts_with("theta,t,z1,z2,z3,segment\n"));
}

#[test]
fn exported_system_reproduces_the_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(pwsm(&d.join("export"), &["export-system", "--model", "glass"]).status.success());
    assert!(pwsm(&d.join("model"), &["find-cycle", "--model", "glass"]).status.success());
    let system = d.join("export/system.json");
    let out = pwsm(&d.join("file"), &["find-cycle", "--system", system.to_str().unwrap(), "--x0", "1,0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t_model = json(&d.join("model/cycle.json"))["period"].as_f64().unwrap();
    let t_file = json(&d.join("file/cycle.json"))["period"].as_f64().unwrap();
    assert!((t_model - t_file).abs() < 1e-10 * t_model);
}

#[test]
fn verify_fixture_reports_singular_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let sys = fixture("non_transverse.json");
    let out = pwsm(dir.path(), &["verify", "--system", &sys, "--x0=-1,0", "--t", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let report = fs::read_to_string(dir.path().join("verify.json")).unwrap();
    assert!(report.contains("\"SingularCrossing\""));
    assert!(report.contains("\"NotTransversal\""));
}

#[test]
fn verify_check_selects_one_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = pwsm(dir.path(), &["verify", "--model", "octagon", "--check", "duality"]);
    assert!(out.status.success());
    let report = json(&dir.path().join("verify.json"));
    let suites = report["suites"].as_array().unwrap();
    assert_eq!(suites.len(), 1);
    assert_eq!(suites[0]["name"], "duality");
    assert_eq!(report["passed"], true);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_pwsm"))
        .env("PWSM_OUT", &target)
        .args(["export-system", "--model", "1d"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("system.json").exists());
}
