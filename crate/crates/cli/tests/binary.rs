use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn tikhon(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tikhon"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn run_ok(command: &str, cfg: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec![command, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = tikhon(&args, out);
    assert!(o.status.success(), "{command}: {}", String::from_utf8_lossy(&o.stderr));
    fs::read_to_string(out.join(format!("{command}.csv"))).unwrap()
}

#[test]
fn scalar_solve_gives_one_half() {
    let dir = TempDir::new().unwrap();
    let csv = run_ok("solve", &config("solve.json"), dir.path(), &[]);
    let x: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((x - 0.5).abs() < 1e-12);
}

#[test]
fn rates_pass_and_fill_the_grid() {
    let dir = TempDir::new().unwrap();
    let o = tikhon(&["rates", "--config", config("rates.json").to_str().unwrap(), "--format", "json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rates.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["violations"], 0);
    assert_eq!(report["records"].as_array().unwrap().len(), 80);
    assert_eq!(report["config_digest"].as_str().unwrap().len(), 64);
    let slope = report["summary"]["fitted_slope"].as_f64().unwrap();
    assert!((slope - 1.0).abs() <= 0.2, "slope {slope}");
}

#[test]
fn weakened_certificate_is_rejected() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(config("rates.json")).unwrap().replace("\"phi_scale\": 1.0", "\"phi_scale\": 0.5");
    let cfg = dir.path().join("sabotaged.json");
    fs::write(&cfg, text).unwrap();
    let o = tikhon(&["rates", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation"));
}

#[test]
fn reruns_are_byte_identical_and_seed_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = config("rates.json");
    let first = run_ok("rates", &cfg, dir.path(), &[]);
    let second = run_ok("rates", &cfg, dir.path(), &[]);
    assert_eq!(first, second);
    let reseeded = run_ok("rates", &cfg, dir.path(), &["--seed", "7"]);
    assert_ne!(first, reseeded);
    assert_eq!(first.lines().count(), reseeded.lines().count());
}

#[test]
fn row_counts_match_schedules() {
    let dir = TempDir::new().unwrap();
    let rows = |csv: String| csv.lines().count() - 1;
    assert_eq!(rows(run_ok("rates", &config("rates.json"), dir.path(), &[])), 8 * 10);
    let stability = rows(run_ok("stability", &config("stability.json"), dir.path(), &[]));
    assert_eq!(stability, tikhon_core::experiments::Schedule::log_steps(10_000, 6).len());
    let convergence = rows(run_ok("convergence", &config("convergence.json"), dir.path(), &[]));
    assert_eq!(convergence, tikhon_core::experiments::Schedule::log_steps(10_000, 5).len());
}

#[test]
fn self_checks_pass() {
    let dir = TempDir::new().unwrap();
    let csv = run_ok("check", &config("check.json"), dir.path(), &[]);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",1")), "{csv}");
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"seed\": 1, \"problem\": {\"operator\": {\"kind\": \"identity\", \"dim\": 1}, \"regularizers\": []}, \"nope\": 0}").unwrap();
    let o = tikhon(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}
