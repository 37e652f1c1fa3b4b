use std::path::PathBuf;
use std::process::Command;

fn corpus(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(rel)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_coresplit")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn path(rel: &str) -> String {
    corpus(rel).display().to_string()
}

#[test]
fn clean_program_exits_zero() {
    let (code, out, _) = run(&["check", &path("programs/clean/01_skip.prog")]);
    assert_eq!(code, 0, "{out}");
    assert!(out.ends_with("0 error(s)\n"));
}

#[test]
fn logging_mutant_exits_one_with_a_flow() {
    let (code, out, _) = run(&["--format", "json", "check", &path("programs/mac_psk_log.prog"), "--taint", &path("taint/default.json")]);
    assert_eq!(code, 1);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["schema"], coresplit::SCHEMA_VERSION);
    let d = &v["result"]["diagnostics"][0];
    assert_eq!(d["rule"], "TAINT-FLOW");
    assert_eq!(d["label"], "L11");
    assert!(d["line"].as_u64().unwrap() > 0);
}

#[test]
fn missing_files_exit_two() {
    let (code, _, err) = run(&["check", "/no/such.prog"]);
    assert_eq!(code, 2);
    assert!(err.contains("no such file"));
    let (code, _, _) = run(&["check", "--config", "/no/such.json"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["check", &path("programs/mac.prog"), "--taint", "/no/taint.json"]);
    assert_eq!(code, 2);
}

#[test]
fn config_file_drives_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "program": path("programs/mac.prog"),
        "taint": path("taint/default.json"),
        "contract": path("contracts/mac_tampered.json"),
        "model": path("models/mac.msr"),
        "role": "Alice",
        "format": "json",
    });
    let p = dir.path().join("cfg.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    let (code, out, _) = run(&["check", "--config", p.to_str().unwrap()]);
    assert_eq!(code, 1);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["result"]["diagnostics"][0]["rule"], "REFINE");
    let (code, _, _) = run(&["check", "--config", p.to_str().unwrap(), "--skip", "refine"]);
    assert_eq!(code, 0);
}

#[test]
fn msr_reports_verdicts() {
    let (code, out, _) = run(&["msr", &path("models/mac.msr"), "--bound", "0"]);
    assert_eq!(code, 0);
    assert!(out.contains("no attack within bound"));
    let (code, out, _) = run(&["--format", "json", "msr", &path("models/signed_dh_pitm.msr"), "--query", "agreement", "--bound", "14"]);
    assert_eq!(code, 1);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["result"]["verdict"]["attack"], true);
    assert!(v["result"]["trace"].as_array().is_some_and(|t| !t.is_empty()));
    let (code, _, _) = run(&["msr", &path("models/mac.msr"), "--query", "nonsense"]);
    assert_eq!(code, 2);
}

#[test]
fn other_commands_run() {
    let prog = path("programs/mac.prog");
    let (code, out, _) = run(&["instrument", &prog]);
    assert_eq!(code, 0);
    assert!(out.contains("//@"));
    let (code, out, _) = run(&["analyze", &prog]);
    assert_eq!(code, 0);
    assert!(out.contains("taint passes"));
    let (code, _, _) = run(&["explore", &path("programs/mutants/c7_same_argument.prog")]);
    assert_eq!(code, 1);
    let contract = path("contracts/mac.json");
    let model = path("models/mac.msr");
    let (code, out, _) = run(&["refine", &prog, "--contract", &contract, "--model", &model, "--role", "Alice"]);
    assert_eq!(code, 0, "{out}");
    let (code, _, _) = run(&["refine", &prog, "--contract", &contract, "--model", &model, "--role", "Nobody"]);
    assert_eq!(code, 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = ["--format", "json", "msr", &path("models/mac.msr"), "--bound", "4", "--simulate", "20", "--seed", "9"];
    assert_eq!(run(&args), run(&args));
    let args = ["--format", "json", "check", &path("programs/clean/29_three_workers.prog")];
    assert_eq!(run(&args), run(&args));
}
