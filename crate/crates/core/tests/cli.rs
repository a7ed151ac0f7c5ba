use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn canvolt(args: &[&str], params: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_canvolt"));
    cmd.args(args).env_remove("CANVOLT_PARAMS");
    if let Some(p) = params {
        cmd.env("CANVOLT_PARAMS", p);
    }
    cmd.output().expect("run canvolt")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_cookbook_scenario_validates() {
    for entry in std::fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        let out = canvolt(&["validate", s(&path)], None);
        assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn invalid_duty_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(scenario("pulse_canl.toml")).unwrap().replace("duty = 0.5", "duty = 1.5");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = canvolt(&["validate", s(&cfg)], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attack.duty"));
}

#[test]
fn baseline_simulation_writes_trace_and_summary() {
    let dir = TempDir::new().unwrap();
    let (trace, summary) = (dir.path().join("t.csv"), dir.path().join("s.json"));
    let out = canvolt(
        &["simulate", s(&scenario("baseline.toml")), "--trace", s(&trace), "--summary", s(&summary), "--check"],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("time_s,kind,ecu,line,value,detail\n"));
    assert_eq!(csv.lines().filter(|l| l.contains(",FrameReceived,")).count(), 60);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(json["messages_received"], 60);
}

#[test]
fn failed_expectation_exits_3() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(scenario("baseline.toml")).unwrap().replace("received = 60", "received = 59");
    let cfg = dir.path().join("wrong.toml");
    std::fs::write(&cfg, text).unwrap();
    let (trace, summary) = (dir.path().join("t.csv"), dir.path().join("s.json"));
    let out = canvolt(&["simulate", s(&cfg), "--trace", s(&trace), "--summary", s(&summary), "--check"], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("received: expected 59, got 60"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("no/such/dir/t.csv");
    let summary = dir.path().join("s.json");
    let out = canvolt(
        &["simulate", s(&scenario("baseline.toml")), "--trace", s(&missing), "--summary", s(&summary)],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_needs_a_sweep_section() {
    let dir = TempDir::new().unwrap();
    let out = canvolt(&["sweep", s(&scenario("baseline.toml")), "--out", s(&dir.path().join("o.csv"))], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fra_sweep_table() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("fra.csv");
    let out = canvolt(&["sweep", s(&scenario("fra_sweep.toml")), "--out", s(&csv)], None);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "param,success,first_failure_reason");
    assert_eq!(&rows[1..], ["2.5,0,", "3,0,", "3.5,0,", "4,0,", "4.5,1,form_error@48", "5,1,form_error@48"]);
}

#[test]
fn calibrated_parameters_override_defaults_via_env() {
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("p.toml");
    let out = canvolt(&["calibrate", "--targets", "dos_threshold=1.5", "--out", s(&params)], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("dos.csv");
    let out = canvolt(&["sweep", s(&scenario("dos_sweep.toml")), "--out", s(&csv)], Some(&params));
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let first = text.lines().skip(1).find(|l| l.split(',').nth(1) == Some("1")).unwrap();
    assert!(first.starts_with("1.5,"), "{first}");
}

#[test]
fn bad_parameter_file_and_targets_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("p.toml");
    std::fs::write(&params, "[transceiver]\nbogus = 1\n").unwrap();
    let out = canvolt(&["validate", s(&scenario("baseline.toml"))], Some(&params));
    assert_eq!(out.status.code(), Some(0), "validate needs no parameters");
    let out = canvolt(
        &["sweep", s(&scenario("dos_sweep.toml")), "--out", s(&dir.path().join("o.csv"))],
        Some(&params),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = canvolt(&["calibrate", "--targets", "nonsense", "--out", s(&params)], None);
    assert_eq!(out.status.code(), Some(1));
}
