use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twohab"))
}

fn default_config() -> serde_json::Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("twohab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_with(cfg: &serde_json::Value, dir: &Path, extra: &[&str]) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    bin()
        .arg("run")
        .arg("--config")
        .arg(&path)
        .arg("--output-dir")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn negative_q_is_a_usage_error_naming_q() {
    let dir = scratch("negq");
    let mut cfg = default_config();
    cfg["habitat"]["q"] = serde_json::json!(-0.5);
    let out = run_with(&cfg, &dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("habitat.q"), "{err}");
    assert!(!dir.join("out/summary.json").exists());
}

#[test]
fn missing_physical_constant_is_rejected() {
    let dir = scratch("missing");
    let mut cfg = default_config();
    cfg["habitat"].as_object_mut().unwrap().remove("d_plus");
    let out = run_with(&cfg, &dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_plus"));
}

#[test]
fn inadmissible_epsilon0_cites_the_bound() {
    let dir = scratch("eps");
    let mut cfg = default_config();
    cfg["sector"]["epsilon0"] = serde_json::json!(0.6);
    let out = run_with(&cfg, &dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sector.epsilon0") && err.contains("arctan"), "{err}");
}

#[test]
fn unknown_suite_is_rejected() {
    let dir = scratch("suite");
    let out = run_with(&default_config(), &dir, &["--suite", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn propositions_suite_exits_zero_and_is_deterministic() {
    let dir = scratch("props");
    let mut cfg = default_config();
    cfg["suites"] = serde_json::json!(["propositions"]);
    let first = run_with(&cfg, &dir, &[]);
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("out/propositions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("kind,name,samples,violations,min_slack"));
    for l in lines {
        assert_eq!(l.split(',').nth(3), Some("0"), "{l}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_object().unwrap().len(), 8);
    assert_eq!(summary["c1_property_suite"]["status"], "pass");
    assert_eq!(summary["c2_symbol_floor"]["status"], "pass");
    assert_eq!(summary["c5_generation_estimate"]["status"], "skipped");

    let a = std::fs::read(dir.join("out/summary.json")).unwrap();
    let b_csv = csv.clone();
    let second = run_with(&cfg, &dir, &[]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.join("out/summary.json")).unwrap(), a);
    assert_eq!(
        std::fs::read_to_string(dir.join("out/propositions.csv")).unwrap(),
        b_csv
    );
}

#[test]
fn sweep_suite_writes_forty_rows() {
    let dir = scratch("sweep");
    let out = run_with(&default_config(), &dir, &["--suite", "sweep", "--jobs", "4"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let csv = std::fs::read_to_string(dir.join("out/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("lambda_re,lambda_im,norm_kind,norm,scaled,wall_time_ms")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 40);
    // seventeen significant digits
    let first = rows[1].split(',').next().unwrap();
    assert_eq!(first.split('e').next().unwrap().len(), 18, "{first}");
}

#[test]
fn output_dir_env_override() {
    let dir = scratch("env");
    let mut cfg = default_config();
    cfg["suites"] = serde_json::json!(["propositions"]);
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let target = dir.join("from-env");
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&path)
        .env("TWOHAB_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("summary.json").exists());
}

#[test]
fn verify_propositions_prints_one_row_per_inequality() {
    let out = bin()
        .args(["verify-propositions", "--samples", "2000", "--seed", "7"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("name,samples,violations,min_slack"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("2000")));
}
