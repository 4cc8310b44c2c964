//! End-to-end runs of the built binary against a generated fixture.

use std::path::Path;
use std::process::{Command, Output};

fn consilium(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_consilium"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let output = consilium(&["--help"], dir.path());
    assert!(output.status.success());
    assert!(stdout(&output).contains("bench"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let output = consilium(&["--no-such-flag"], dir.path());
    assert_eq!(output.status.code(), Some(1));
    let output = consilium(&["bench", "--doctor", "psychic"], dir.path());
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let output = consilium(&["build-kb"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("error:"));
}

#[test]
fn fixture_to_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");

    let output = consilium(
        &["gen-fixture", fx.to_str().unwrap(), "--cases", "4"],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let config = fx.join("config.toml");
    assert!(config.exists());
    let config = config.to_str().unwrap();

    let output = consilium(&["--config", config, "build-kb"], dir.path());
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(fx.join("kb/doctor.idx").exists());
    assert!(fx.join("kb/manifest.json").exists());

    let output = consilium(&["--config", config, "bench"], dir.path());
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(stdout(&output).contains("top1 1.000"));
    assert!(fx
        .join("out/report-doctor-reflective_pharmacist-reflective.json")
        .exists());

    // Consulting with a fixture case's complaint replays its script; the
    // printed trace must carry the scripted diagnosis per stage.
    let cases = std::fs::read_to_string(fx.join("cases.jsonl")).unwrap();
    let case: serde_json::Value = serde_json::from_str(cases.lines().nth(1).unwrap()).unwrap();
    let complaint = case["complaint"].as_str().unwrap();
    let gold = case["gold_diagnosis"].as_str().unwrap();
    let record_path = fx.join("out/consult.json");
    let output = consilium(
        &[
            "--config",
            config,
            "consult",
            complaint,
            "--record",
            record_path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let trace = stdout(&output);
    assert!(trace.contains("== diagnosis =="), "{trace}");
    assert!(trace.contains(&format!("1. {gold}")), "{trace}");
    let raw = std::fs::read_to_string(&record_path).unwrap();
    let record: serde_json::Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(
        record["doctor"]["diagnosis"]["ranked"][0]["condition"],
        gold
    );

    let output = consilium(&["--config", config, "judge"], dir.path());
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(fx.join("out/judge-report.json").exists());

    let output = consilium(&["--config", config, "ablate"], dir.path());
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(fx.join("out/ablation.json").exists());
    let table = stdout(&output);
    assert!(table.contains("doctor-reflective_pharmacist-reflective"));
    assert!(table.contains("doctor-naive_pharmacist-naive"));

    let output = consilium(
        &[
            "--config",
            config,
            "ablate",
            "--doctor",
            "naive",
            "--pharmacist",
            "naive",
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let table = stdout(&output);
    assert!(table.contains("doctor-naive_pharmacist-naive"));
    assert!(!table.contains("doctor-reflective"));
}
