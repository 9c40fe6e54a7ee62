//! Runs the `sepplan` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sepplan_core::verification::{CertificationReport, Violation};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sepplan"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// One solved single-car run shared by the tests that need a trajectory.
fn solved() -> &'static (tempfile::TempDir, Output) {
    static SOLVED: OnceLock<(tempfile::TempDir, Output)> = OnceLock::new();
    SOLVED.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = run(bin()
            .arg("solve")
            .arg(scenario("parking_single_car_1obs"))
            .arg("--out")
            .arg(dir.path().join("run")));
        (dir, out)
    })
}

fn solved_file(suffix: &str) -> PathBuf {
    solved().0.path().join(format!("run_{suffix}"))
}

fn verify_json(traj: &Path, scen: &Path) -> (Output, Option<CertificationReport>) {
    let out = run(bin().arg("verify").arg(traj).arg(scen).arg("--json"));
    let rep = serde_json::from_slice(&out.stdout).ok();
    (out, rep)
}

#[test]
fn count_prints_the_variable_table() {
    let out = run(bin().arg("count").arg(scenario("parking_single_car_2obs")));
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("396") && text.contains("696"), "{text}");
    assert!(text.contains("farkas"));

    let out = run(bin()
        .args(["count", "--json", "--formulation", "hyperplane"])
        .arg(scenario("parking_tractor_trailer")));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn solve_writes_outputs_and_exits_zero() {
    let (_, out) = solved();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for suffix in ["traj.csv", "planes.csv", "report.json"] {
        assert!(solved_file(suffix).exists(), "{suffix}");
    }
    let report: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(solved_file("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "converged");
    assert_eq!(report["certified"], true);
    assert_eq!(report["schema_version"], 1);
    let traj = std::fs::read_to_string(solved_file("traj.csv")).unwrap();
    assert!(traj.starts_with("step,t,x,y,theta1,v,delta,a,omega"));
    let planes = std::fs::read_to_string(solved_file("planes.csv")).unwrap();
    assert!(planes.lines().count() > 1);
}

#[test]
fn verify_accepts_the_solved_trajectory() {
    let (out, rep) = verify_json(
        &solved_file("traj.csv"),
        &scenario("parking_single_car_1obs"),
    );
    assert_eq!(out.status.code(), Some(0));
    let rep = rep.unwrap();
    assert!(rep.certified);
    assert_eq!(rep.steps_checked, 31);
}

#[test]
fn verify_flags_a_body_moved_into_the_obstacle() {
    let text = std::fs::read_to_string(solved_file("traj.csv")).unwrap();
    let moved: Vec<String> = text
        .lines()
        .map(|line| {
            let mut cols: Vec<String> = line.split(',').map(String::from).collect();
            if cols[0] == "10" {
                // obstacle centroid
                cols[2] = "0.5".into();
                cols[3] = "-6.5".into();
            }
            cols.join(",")
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, moved.join("\n")).unwrap();
    let (out, rep) = verify_json(&path, &scenario("parking_single_car_1obs"));
    assert_eq!(out.status.code(), Some(3));
    let rep = rep.unwrap();
    assert!(!rep.certified);
    let collisions: Vec<usize> = rep
        .violations
        .iter()
        .filter_map(|v| match v {
            Violation::Collision { step, .. } => Some(*step),
            _ => None,
        })
        .collect();
    assert_eq!(collisions, vec![10]);
}

#[test]
fn verify_rejects_a_trajectory_of_the_wrong_length() {
    let text = std::fs::read_to_string(solved_file("traj.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.csv");
    std::fs::write(&path, lines[..lines.len() - 1].join("\n")).unwrap();
    let out = run(bin()
        .arg("verify")
        .arg(&path)
        .arg(scenario("parking_single_car_1obs")));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error"), "{err}");
}

fn empty_scenario(dir: &Path) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(scenario("parking_single_car_1obs")).unwrap())
            .unwrap();
    v["obstacles"] = serde_json::json!([]);
    v["name"] = "empty".into();
    let path = dir.join("empty.json");
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    path
}

#[test]
fn obstacle_free_scenario_is_trivially_certified() {
    let dir = tempfile::tempdir().unwrap();
    let scen = empty_scenario(dir.path());
    let out = run(bin()
        .arg("solve")
        .arg(&scen)
        .arg("--out")
        .arg(dir.path().join("e")));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let (out, rep) = verify_json(&dir.path().join("e_traj.csv"), &scen);
    assert_eq!(out.status.code(), Some(0));
    assert!(rep.unwrap().violations.is_empty());
}

#[test]
fn solver_failure_exits_with_two_and_still_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("solve")
        .arg(scenario("parking_single_car_1obs"))
        .args(["--time-limit", "0.001", "--out"])
        .arg(dir.path().join("t")));
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("t_report.json").exists());
}

#[test]
fn malformed_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema_version": 1, "name": "x"}"#).unwrap();
    let out = run(bin().arg("count").arg(&bad));
    assert_eq!(out.status.code(), Some(1));
    let out = run(bin().arg("count").arg(dir.path().join("missing.json")));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_runs_a_suite_and_honours_the_thread_variable() {
    let dir = tempfile::tempdir().unwrap();
    empty_scenario(dir.path());
    let suite = dir.path().join("suite.json");
    std::fs::write(
        &suite,
        r#"{"schema_version": 1, "time_limit": 60,
            "runs": [{"scenario": "empty.json", "formulations": ["hyperplane"], "inits": ["geometry", "constant"]}]}"#,
    )
    .unwrap();
    let report = dir.path().join("bench.json");
    let out = run(bin()
        .env("SEPPLAN_THREADS", "2")
        .arg("bench")
        .arg(&suite)
        .arg("--out")
        .arg(&report));
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(&report).unwrap()).unwrap();
    assert_eq!(v["threads"], 2);
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);

    let out = run(bin()
        .env("SEPPLAN_THREADS", "lots")
        .arg("bench")
        .arg(&suite));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(bin().arg("solve")).status.code(), Some(1));
    assert_eq!(run(bin().arg("frobnicate")).status.code(), Some(1));
    assert_eq!(run(bin().arg("--help")).status.code(), Some(0));
}
