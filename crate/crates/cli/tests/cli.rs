use std::path::Path;
use std::process::{Command, Output};

fn biconmp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biconmp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn hover_solve_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = biconmp(&["--scenario", "hover", "--mode", "solve"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("knot,t,cx"));
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), summary["iterations"].as_u64().unwrap() as usize);
}

#[test]
fn unreachable_tolerance_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = biconmp(&["--scenario", "trot", "--eps-dyn", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 50);
}

#[test]
fn missing_mass_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&biconmp::scenario::Scenario::hover().to_json().unwrap()).unwrap();
    doc.as_object_mut().unwrap().remove("mass");
    let path = dir.path().join("no_mass.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    let out = biconmp(&["--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mass"));
}

#[test]
fn unknown_scenario_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = biconmp(&["--scenario", "no-such-thing"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gait_mode_writes_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = biconmp(&["--scenario", "trot", "--mode", "gait"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("gait.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 2 + 4 * 4);
    // trot: diagonal pairs alternate, so every row has exactly two contacts
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let contacts: f64 = (0..4).map(|j| cols[2 + 4 * j]).sum();
        assert_eq!(contacts, 2.0);
    }
}

#[test]
fn mpc_output_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut s = biconmp::scenario::Scenario::trot();
    s.mpc.scenario_duration = 0.4;
    let path = dir.path().join("short.json");
    std::fs::write(&path, s.to_json().unwrap()).unwrap();
    let args = ["--scenario", path.to_str().unwrap(), "--mode", "mpc", "--sequential", "--seed", "7"];
    assert_eq!(biconmp(&args, a.path()).status.code(), Some(0));
    assert_eq!(biconmp(&args, b.path()).status.code(), Some(0));
    let read = |d: &Path| std::fs::read(d.join("mpc.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn trace_env_writes_replans() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_biconmp"))
        .args(["--scenario", "stand", "--mode", "mpc", "--replan-hz", "10"])
        .arg("--out")
        .arg(dir.path())
        .env("BICONMP_TRACE", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let lines = std::fs::read_to_string(dir.path().join("replans.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 20);
}
