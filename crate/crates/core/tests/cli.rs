use std::path::Path;
use std::process::Command;

fn focc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_focc"))
}

fn smoke_config(dir: &Path) -> std::path::PathBuf {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(src).unwrap()).unwrap();
    cfg["output_dir"] = dir.join("out").to_string_lossy().into_owned().into();
    cfg["seeds"] = serde_json::json!([4]);
    let path = dir.join("smoke.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = focc().args(["train", "--config", "/nonexistent.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
}

#[test]
fn unknown_sweep_parameter_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = focc()
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--param", "depth", "--values", "1,2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(focc().output().unwrap().status.code(), Some(2));
}

#[test]
fn train_writes_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = focc().args(["train", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("median test token error rate"));
    let run = dir.path().join("out");
    let metrics = std::fs::read_to_string(run.join("metrics_seed4.csv")).unwrap();
    assert!(metrics.starts_with("epoch,"));
    assert_eq!(metrics.lines().count(), 3);
    assert!(run.join("checkpoint_seed4.json").exists());
    assert!(run.join("aggregate.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = focc()
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--param", "C", "--values", "2,4"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("chunk_size,"));
    assert!(dir.path().join("out/chunk_size=2/metrics_seed4.csv").exists());
}

#[test]
fn check_fast_reports_every_property() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("check.json");
    let out = focc()
        .args(["check", "--level", "fast", "--json", json.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["properties"].as_array().unwrap().len(), 8);
}
