use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdereach"))
}

fn model(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn missing_model_is_a_validation_error() {
    assert_eq!(code(bin().args(["certify", "/no/such/model.json"])), 2);
}

#[test]
fn kind_of_the_wrong_query_is_rejected() {
    assert_eq!(code(bin().arg("certify").arg(model("brownian.json")).args(["--kind", "IU1"])), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(bin().args(["certify", "--bogus"])), 2);
}

#[test]
fn bad_backend_and_alpha_grid_are_rejected() {
    let m = model("brownian.json");
    assert_eq!(code(bin().arg("certify").arg(&m).args(["--backend", "cloud"])), 2);
    assert_eq!(code(bin().arg("certify").arg(&m).args(["--alpha-grid", "0,x"])), 2);
}

#[test]
fn broken_model_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"n": 1, "k": 1, "drift": ["x3"], "diffusion": [["1"]]}"#).unwrap();
    assert_eq!(code(bin().arg("estimate").arg(&path)), 2);
}

#[test]
fn estimate_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let csv = dir.path().join("p.csv");
    let status = bin()
        .arg("estimate")
        .arg(model("ou.json"))
        .args(["--paths", "500", "--seed", "4", "--out"])
        .arg(&out)
        .arg("--trace-csv")
        .arg(&csv)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["oracle"]["n_paths"], 500);
    assert!(report.get("timings").is_none());
    let trace = std::fs::read_to_string(&csv).unwrap();
    assert!(trace.starts_with("t,x1,stopped_flag\n"));
    assert!(trace.lines().count() > 2);
}

#[test]
fn certify_reports_every_kind_of_the_query() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let status = bin()
        .arg("certify")
        .arg(model("brownian.json"))
        .args(["--query", "instant", "--deg-v", "2", "--deg-w", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let kinds: Vec<&str> = report["bounds"].as_array().unwrap().iter().map(|b| b["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["IU1", "IU2", "IU3", "IL1", "IL2", "IL3"]);
}

#[test]
fn sdpa_solve_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.dat-s");
    let output = dir.path().join("p.out");
    // min y subject to y*I - diag(1, 0) PSD; optimum y = 1.
    std::fs::write(&input, "1\n1\n2\n1.0\n0 1 1 1 1.0\n1 1 1 1 1.0\n1 1 2 2 1.0\n").unwrap();
    let out = bin().arg("sdpa-solve").arg(&input).arg(&output).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "optimal");
    assert!(!std::fs::read_to_string(&output).unwrap().is_empty());
}
