use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rclf_core::certify::CertificateReport;
use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rclf(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rclf"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn demo_with(dir: &TempDir, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(configs().join("demo.toml")).unwrap();
    assert!(text.contains(from), "{from}");
    let path = dir.path().join("scenario.toml");
    fs::write(&path, text.replace(from, to)).unwrap();
    path
}

#[test]
fn simulate_demo_reaches_operating_point() {
    let dir = TempDir::new().unwrap();
    let o = rclf(
        &["simulate", "--seed", "42"],
        &configs().join("demo.toml"),
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "trajectory_transformed.csv",
        "trajectory_physical.csv",
        "trajectory.svg",
        "simulate.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let s = json(&dir.path().join("simulate.json"));
    let rel = |a: &str, b: &str| {
        ((s[a].as_f64().unwrap() - s[b].as_f64().unwrap()) / s[b].as_f64().unwrap()).abs()
    };
    assert!(rel("final_substrate", "equilibrium_substrate") <= 0.01);
    assert!(rel("final_biomass", "equilibrium_biomass") <= 0.01);
    let header = fs::read_to_string(dir.path().join("trajectory_physical.csv")).unwrap();
    assert!(header.starts_with("t,X,S,D\n"));
}

#[test]
fn equilibrium_start_without_uncertainty_is_constant() {
    let dir = TempDir::new().unwrap();
    let cfg = demo_with(&dir, "x0_physical = [200.0, 100.0]", "x0 = [0.0, 0.0]");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("a = 0.05", "a = 0.0");
    fs::write(&cfg, text).unwrap();
    let o = rclf(&["simulate"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("trajectory_transformed.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows.len() > 100);
    let state = |r: &str| r.split_once(',').unwrap().1.to_owned();
    assert!(
        rows.iter().all(|r| state(r) == state(rows[0])),
        "{}",
        rows[1]
    );
}

#[test]
fn missing_growth_section_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("demo.toml")).unwrap();
    let start = text.find("[growth]").unwrap();
    let end = text.find("[chemostat]").unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, format!("{}{}", &text[..start], &text[end..])).unwrap();
    let o = rclf(&["simulate"], &path, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[growth]"));
}

#[test]
fn unknown_key_names_section_and_key() {
    let dir = TempDir::new().unwrap();
    let cfg = demo_with(&dir, "k1 = 100.0", "k_1 = 100.0");
    let o = rclf(&["verify"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[growth]") && err.contains("k_1"), "{err}");
}

#[test]
fn verify_demo_passes_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let o = rclf(&["verify"], &configs().join("demo.toml"), dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = fs::read_to_string(dir.path().join("certificates.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["passed"], Value::Bool(true));
    let reports: Vec<CertificateReport> = serde_json::from_value(v["reports"].clone()).unwrap();
    assert_eq!(reports.len(), 3);
    assert!(reports.iter().all(|r| r.passed));
    let again: Vec<CertificateReport> =
        serde_json::from_str(&rclf_core::report::to_json_string(&reports).unwrap()).unwrap();
    assert_eq!(again, reports);
    assert!(dir.path().join("constants.json").exists());
}

#[test]
fn verify_rejects_decay_above_peak_growth() {
    let dir = TempDir::new().unwrap();
    let cfg = demo_with(&dir, "b = 0.1", "b = 30.0");
    let o = rclf(&["verify"], &cfg, dir.path());
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mu(S_s) - b"));

    let cfg = demo_with(&dir, "b = 0.1", "b = 5.0");
    let o = rclf(&["verify"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("growth-rate hypothesis violated"));
}

#[test]
fn counterexample_reports_two_roots_and_washout() {
    let dir = TempDir::new().unwrap();
    let o = rclf(
        &["counterexample"],
        &configs().join("washout.toml"),
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r = json(&dir.path().join("counterexample.json"));
    assert!(r["s1"].as_f64().unwrap() < r["s2"].as_f64().unwrap());
    assert_eq!(r["washout"], Value::Bool(true));
    assert!(dir.path().join("washout.csv").exists());
}

#[test]
fn backstep_from_origin_without_disturbance_stays_put() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("b.toml");
    fs::write(
        &path,
        "[feedback]\nfamily = \"backstepping\"\nn = 2\ndisturbance_width = 0.1\n\
         [integrator]\nx0 = [0.0, 0.0]\ndisturbance = \"zero\"\nhorizon = 2.0\nstep = 1e-3\n",
    )
    .unwrap();
    let o = rclf(&["backstep"], &path, dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let vals: Vec<f64> = row.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert!(vals.iter().all(|v| *v == 0.0), "{row}");
    }
}

#[test]
fn backstep_suite_respects_input_bound() {
    let dir = TempDir::new().unwrap();
    let o = rclf(
        &["backstep", "--trials", "4"],
        &configs().join("backstep2.toml"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let r = json(&dir.path().join("backstep.json"));
    assert_eq!(r["converged"], 4);
    assert!(r["max_abs_input"].as_f64().unwrap() <= r["input_bound"].as_f64().unwrap());
}

#[test]
fn urgas_is_deterministic_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("demo.toml");
    let run = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        let o = rclf(&["urgas", "--trials", "4", "--seed", seed], &cfg, &out);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        fs::read(out.join("urgas.json")).unwrap()
    };
    let (a, b, c) = (run("a", "42"), run("b", "42"), run("c", "43"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(dir.path().join("a/entry.json").exists());
}

#[test]
fn sweep_writes_one_report_per_magnitude() {
    let dir = TempDir::new().unwrap();
    let o = rclf(
        &["sweep", "--trials", "2"],
        &configs().join("demo.toml"),
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r = json(&dir.path().join("sweep.json"));
    let entries = r["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    assert!(entries
        .iter()
        .all(|e| e["report"]["converged_fraction"] == 1.0));
    assert_eq!(r["law_identical"], Value::Bool(true));
}

#[test]
fn planar_commands() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("planar.toml");
    assert_eq!(rclf(&["verify"], &cfg, dir.path()).status.code(), Some(0));
    assert_eq!(rclf(&["simulate"], &cfg, dir.path()).status.code(), Some(0));
    let s = json(&dir.path().join("simulate.json"));
    assert!(s["min_input"].as_f64().unwrap() >= -1.0);
    assert!(s["final_norm"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn zero_trials_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = rclf(
        &["urgas", "--trials", "0"],
        &configs().join("demo.toml"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}
