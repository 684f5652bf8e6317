use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn incomedist(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_incomedist"));
    cmd.args(args).env_remove("INCOMEDIST_OUT");
    cmd
}

fn run_in(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    incomedist(&[sub])
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = incomedist(&["--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = incomedist(&["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ge-example"));
}

#[test]
fn missing_config_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = incomedist(&["simulate", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulate"));
}

#[test]
fn negative_price_is_solver_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("e1.toml"))
        .unwrap()
        .replace("purchase_quantities = 0.3", "purchase_quantities = 50.0");
    let cfg = tmp.path().join("neg.toml");
    fs::write(&cfg, text).unwrap();
    let out = run_in("simulate", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(manifest(&tmp.path().join("out"))["status"], "failed");
}

#[test]
fn out_of_range_leverage_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("e1.toml")).unwrap();
    let text: String = text
        .lines()
        .map(|l| if l.starts_with("leverage_ratios") { "leverage_ratios = 1.5" } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = tmp.path().join("lev.toml");
    fs::write(&cfg, text).unwrap();
    let out = run_in("simulate", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn failure_clears_previous_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    assert!(run_in("ge-example", &fixture("ge.toml"), &dir, &[]).status.success());
    assert!(dir.join("solution.json").exists());

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "alpha = 2.0\n").unwrap();
    let out = run_in("ge-example", &bad, &dir, &[]);
    assert_eq!(out.status.code(), Some(1));
    let m = manifest(&dir);
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("alpha"));
    assert!(!dir.join("solution.json").exists());
    assert!(!dir.join("values.csv").exists());
}

#[test]
fn symmetric_ge_has_no_arbitrage_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in("ge-example", &fixture("symmetric.toml"), tmp.path(), &[]);
    assert!(out.status.success());
    let sol = json(&tmp.path().join("solution.json"));
    assert!(sol["delta"].as_f64().unwrap().abs() < 1e-10);
    assert!(sol["max_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn empirical_fixture_recovers_identity_regression() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in("empirical", &fixture("fixture.toml"), tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ols = &json(&tmp.path().join("report.json"))["regression"];
    assert!((ols["correlation"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((ols["slope"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let derived = fs::read_to_string(tmp.path().join("derived.csv")).unwrap();
    assert!(derived.starts_with("quarter,A,DY,Y,SP,loan_rate,PC,G,D,s,g,R_q,R,MKTPT_PREMIUM,NEW_SERIES"));
}

#[test]
fn json_format_writes_json_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in("ge-example", &fixture("ge.toml"), tmp.path(), &["--format", "json"]);
    assert!(out.status.success());
    let rows = json(&tmp.path().join("values.json"));
    assert!(rows.as_array().unwrap().iter().all(|r| r["variable"].is_string()));
    assert!(!tmp.path().join("values.csv").exists());
}

#[test]
fn manifest_lists_outputs_with_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in("asympt", &fixture("asympt.toml"), tmp.path(), &[]);
    assert!(out.status.success());
    let m = manifest(tmp.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["subcommand"], "asympt");
    for o in m["outputs"].as_array().unwrap() {
        let bytes = fs::read(tmp.path().join(o["name"].as_str().unwrap())).unwrap();
        assert_eq!(o["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(o["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn default_output_dir_follows_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = incomedist(&["ge-example", "--config"])
        .arg(fixture("ge.toml"))
        .env("INCOMEDIST_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("ge-example").join("manifest.json").exists());
}

#[test]
fn seed_flag_changes_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run_in("empirical", &fixture("synthetic.toml"), &a, &["--seed", "1"]).status.success());
    assert!(run_in("empirical", &fixture("synthetic.toml"), &b, &["--seed", "2"]).status.success());
    assert_ne!(fs::read(a.join("derived.csv")).unwrap(), fs::read(b.join("derived.csv")).unwrap());
    assert_eq!(manifest(&a)["seed"], 1);
}
