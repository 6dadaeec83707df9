//! Command-line behaviour: exit codes, outputs, and the standalone test and
//! evaluate commands.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;

fn webtdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webtdd")).args(args).env_remove("WEBTDD_ENDPOINT").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(webtdd(&["generate"]).status.code(), Some(2));
    assert_eq!(webtdd(&["no-such-command"]).status.code(), Some(2));
    let templates = fixtures().join("templates");
    let out = webtdd(&["generate", "--desc", "x", "--template-store", p(&templates), "--driver", "firefox-magic"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = webtdd(&["evaluate", "--records", "/definitely/missing.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_records_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.json");
    std::fs::write(&path, r#"[{"app_id": "a", "tests": [{"verdict": "YES"}], "appearance": 9}, {"app_id": "b"}]"#).unwrap();
    let out = webtdd(&["evaluate", "--records", p(&path), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("record 0") && err.contains("record 1"), "{err}");
}

#[test]
fn unreachable_provider_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "[provider]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\ntransport_retries = 0\nrequest_timeout_secs = 2\n").unwrap();
    let run_dir = dir.path().join("run");
    let out = webtdd(&[
        "generate", "--desc", "A page", "--template-store", p(&fixtures().join("templates")),
        "--config", p(&config), "--run-dir", p(&run_dir),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
}

#[test]
fn evaluate_alignment_reports_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixtures().join("alignment");
    let out = webtdd(&[
        "evaluate", "--alignment", p(&a.join("manual.json")), p(&a.join("agent.json")),
        "--reported-rate", "82.8", "--out", p(dir.path()),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("23/28 = 82.14%"), "{stdout}");
    assert!(stdout.contains("23/23 = 100.00%"), "{stdout}");
    assert!(stdout.contains("Note:"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("alignment.json")).unwrap()).unwrap();
    assert_eq!(report["restricted_matches"], 23);
}

#[test]
fn evaluate_records_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.json");
    std::fs::write(
        &path,
        r#"[{"app_id": "a", "tests": [
              {"verdict": "YES", "instruction_category": "Blog", "test_category": "functionality"},
              {"verdict": "PARTIAL", "instruction_category": "Blog", "test_category": "data-display"}]},
            {"app_id": "b", "started": false, "tests": [
              {"verdict": "YES", "instruction_category": "Game", "test_category": "functionality"}]}]"#,
    )
    .unwrap();
    let out = webtdd(&["evaluate", "--records", p(&path), "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["counts"]["n_total"], 3);
    assert!((report["accuracy"].as_f64().unwrap() - 50.0).abs() < 1e-9);
    assert!(dir.path().join("report.txt").is_file());
}

#[test]
fn generate_then_test_under_replay() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, format!("[runner]\nbase_port = {}\n", free_base_port())).unwrap();
    let run_dir = dir.path().join("run");
    let cassette = fixtures().join("cassettes/bakery.jsonl");
    let templates = fixtures().join("templates");
    let out = webtdd(&[
        "generate", "--desc-file", p(&fixtures().join("requests/bakery.txt")), "--replay", p(&cassette),
        "--template-store", p(&templates), "--config", p(&config), "--run-dir", p(&run_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let events: Vec<serde_json::Value> = String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events.first().unwrap()["event"], "run-started");
    assert!(events.iter().any(|e| e["event"] == "suite-run"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "done");
    assert_eq!(manifest["cassette_mode"], "replay");

    // The final workspace passes every test; re-running it is served by the
    // same cassette.
    let feedback = dir.path().join("feedback.json");
    let out = webtdd(&[
        "test", "--run-dir", p(&run_dir), "--replay", p(&cassette), "--template-store", p(&templates),
        "--config", p(&config), "--out", p(&feedback),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bundle: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&feedback).unwrap()).unwrap();
    assert_eq!(bundle["counts"]["yes"], 4);
    assert_eq!(bundle["counts"]["total"], 4);
}
