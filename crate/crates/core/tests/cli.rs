use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bfsmooth::io::{load_dataset, load_results};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bfsmooth"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = run(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_data(dir: &TempDir, extra: &[&str]) -> PathBuf {
    let d = p(dir, "data.json");
    let mut args = vec!["simulate", "--out", s(&d), "--n", "6", "--p", "12"];
    args.extend_from_slice(extra);
    ok(&args);
    d
}

const SHORT: [&str; 6] = ["--M", "300", "--Burnin", "100", "--resid_thin", "5"];

#[test]
fn simulate_default_shape_and_determinism() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a.json"), p(&dir, "b.json"));
    ok(&["simulate", "--out", s(&a)]);
    ok(&["simulate", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = load_dataset(&a).unwrap();
    assert_eq!(ds.n(), 30);
    assert_eq!(ds.pooled.len(), 40);
    let doc: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(doc["format"], "bfsmooth-dataset");
    assert_eq!(doc["meta"]["sim_config"]["n"], 30);
}

#[test]
fn simulate_nonstationary_keeps_truth() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &["--stat", "0"]);
    let ds = load_dataset(&d).unwrap();
    assert!(ds.has_truth());
    assert!(ds.true_cov.is_some() && ds.true_mean.is_some());
    assert!(!ds.sim_config.unwrap().stat);
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = TempDir::new().unwrap();
    let (c, err) = code(&["simulate", "--out", s(&p(&dir, "x.json")), "--r", "-1"]);
    assert_eq!(c, 2);
    assert!(err.contains("r"), "{err}");
}

#[test]
fn smooth_bhm_writes_summaries_and_sidecars() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &[]);
    let r = p(&dir, "r.json");
    let mut args = vec!["smooth", "--data", s(&d), "--out", s(&r), "--smethod", "bhm"];
    args.extend_from_slice(&SHORT);
    ok(&args);
    let doc: Value = serde_json::from_slice(&std::fs::read(&r).unwrap()).unwrap();
    for key in ["Z", "Z_CL", "Z_UL", "mu", "mu_CI", "Sigma", "Sigma_SE", "rn", "rs", "pmin_vec"] {
        assert!(doc["result"].get(key).is_some(), "missing {key}");
    }
    assert_eq!(doc["config"]["M"], 300);
    assert!(doc["runtime_secs"].as_f64().unwrap() >= 0.0);
    assert!(Path::new(&format!("{}.draws.bin", s(&r))).exists());
    assert!(Path::new(&format!("{}.resid.bin", s(&r))).exists());
}

#[test]
fn smooth_babf_adds_basis_outputs() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &["--cgrid", "0", "--dense", "0.7"]);
    let r = p(&dir, "r.json");
    let mut args = vec![
        "smooth", "--data", s(&d), "--out", s(&r), "--smethod", "babf", "--cgrid", "0", "--m", "8", "--eval_grid",
        "0:1.5:15", "--no-draws",
    ];
    args.extend_from_slice(&SHORT);
    ok(&args);
    let doc: Value = serde_json::from_slice(&std::fs::read(&r).unwrap()).unwrap();
    for key in ["Zt", "Z_cgrid", "Zeta", "Btau", "BT", "tau", "mu_cgrid", "Sigma_zeta"] {
        assert!(doc["result"]["babf"].get(key).is_some(), "missing {key}");
    }
    assert_eq!(doc["result"]["grid"].as_array().unwrap().len(), 15);
    assert!(doc.get("sidecars").is_none());
}

#[test]
fn smooth_validation_and_scope_exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &[]);
    let r = p(&dir, "r.json");
    let base = ["smooth", "--data", s(&d), "--out", s(&r)];
    let with = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        code(&a)
    };
    assert_eq!(with(&["--M", "100", "--Burnin", "100"]).0, 2);
    let (c, err) = with(&["--smethod", "bgp"]);
    assert_eq!(c, 4);
    assert!(err.contains("out of scope"), "{err}");
    assert_eq!(with(&["--smethod", "bfpca"]).0, 4);
    assert_eq!(with(&["--pace", "1"]).0, 4);
    assert_eq!(with(&["--ws", "0"]).0, 2);
    assert!(!r.exists());
}

#[test]
fn cgrid_flag_must_match_the_data() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &["--cgrid", "0", "--dense", "0.5"]);
    let r = p(&dir, "r.json");
    let mut args = vec!["smooth", "--data", s(&d), "--out", s(&r), "--smethod", "bhm"];
    args.extend_from_slice(&SHORT);
    let (c, err) = code(&args);
    assert_eq!(c, 2);
    assert!(err.contains("cgrid"), "{err}");
}

#[test]
fn config_echo_replays_exactly() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &[]);
    let (r1, r2) = (p(&dir, "r1.json"), p(&dir, "r2.json"));
    let mut args = vec!["smooth", "--data", s(&d), "--out", s(&r1), "--smethod", "bhm", "--seed", "9"];
    args.extend_from_slice(&SHORT);
    ok(&args);
    let first = load_results(&r1).unwrap();
    let cfg = p(&dir, "cfg.json");
    std::fs::write(&cfg, serde_json::to_string(&first.config).unwrap()).unwrap();
    ok(&["smooth", "--data", s(&d), "--out", s(&r2), "--config", s(&cfg)]);
    let second = load_results(&r2).unwrap();
    assert_eq!(first.result, second.result);
    assert_eq!(first.config, second.config);
}

#[test]
fn diagnose_reports_truth_psrf_and_csv() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &[]);
    let (r1, r2) = (p(&dir, "r1.json"), p(&dir, "r2.json"));
    for (r, seed) in [(&r1, "1"), (&r2, "2")] {
        let mut args = vec!["smooth", "--data", s(&d), "--out", s(r), "--smethod", "bhm", "--seed", seed];
        args.extend_from_slice(&SHORT);
        ok(&args);
    }
    let (c, err) = code(&["diagnose", s(&r1), "--psrf"]);
    assert_eq!(c, 2);
    assert!(err.contains("two chains"), "{err}");

    let csv = p(&dir, "csv");
    let out = ok(&["diagnose", s(&r1), s(&r2), "--psrf", "--data", s(&d), "--csv-dir", s(&csv)]);
    assert!(out.contains("PSRF over 2 chain(s)"), "{out}");
    assert!(out.contains("sigma_eps2"));
    assert!(out.contains("band coverage"), "{out}");
    let curves = std::fs::read_to_string(csv.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 6 * 12);
    let cov = std::fs::read_to_string(csv.join("cov.csv")).unwrap();
    assert_eq!(cov.lines().count(), 1 + 12 * 12);
    assert!(csv.join("mean.csv").exists());
}

#[test]
fn diagnose_without_sidecars_explains() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &[]);
    let (r1, r2) = (p(&dir, "r1.json"), p(&dir, "r2.json"));
    for r in [&r1, &r2] {
        let mut args = vec!["smooth", "--data", s(&d), "--out", s(r), "--smethod", "bhm", "--no-draws"];
        args.extend_from_slice(&SHORT);
        ok(&args);
    }
    let (c, err) = code(&["diagnose", s(&r1), s(&r2), "--psrf"]);
    assert_eq!(c, 2);
    assert!(err.contains("sidecar"), "{err}");
}

#[test]
fn unknown_major_version_is_rejected() {
    let dir = TempDir::new().unwrap();
    let d = small_data(&dir, &[]);
    let text = std::fs::read_to_string(&d).unwrap().replace("\"version\":\"1.0\"", "\"version\":\"3.0\"");
    std::fs::write(&d, text).unwrap();
    let (c, err) = code(&["smooth", "--data", s(&d), "--out", s(&p(&dir, "r.json"))]);
    assert_eq!(c, 2);
    assert!(err.contains("version"), "{err}");
}

#[test]
fn regress_single_replicate_and_determinism() {
    let dir = TempDir::new().unwrap();
    let d = p(&dir, "data.json");
    ok(&["simulate", "--out", s(&d), "--rgrid", "--n", "12", "--p", "25"]);
    let r = p(&dir, "r.json");
    let mut args = vec![
        "smooth", "--data", s(&d), "--out", s(&r), "--cgrid", "0", "--m", "8", "--eval_grid", "0:1.5707963267948966:20",
        "--no-draws",
    ];
    args.extend_from_slice(&SHORT);
    ok(&args);
    let one = ok(&["regress", "--results", s(&r), "--data", s(&d), "--replicates", "1", "--n-train", "8", "--n-test", "4"]);
    assert!(one.lines().skip(1).all(|l| !l.contains('(')), "{one}");
    let a = ok(&["regress", "--results", s(&r), "--data", s(&d), "--replicates", "5", "--n-train", "8", "--n-test", "4"]);
    let b = ok(&["regress", "--results", s(&r), "--data", s(&d), "--replicates", "5", "--n-train", "8", "--n-test", "4"]);
    assert_eq!(a, b);
    assert!(a.contains("BABF") && a.contains("CSS"));
}

#[test]
fn regress_needs_three_curves() {
    let dir = TempDir::new().unwrap();
    let d = p(&dir, "data.json");
    ok(&["simulate", "--out", s(&d), "--n", "2", "--p", "10"]);
    let r = p(&dir, "r.json");
    let mut args = vec!["smooth", "--data", s(&d), "--out", s(&r), "--smethod", "bhm", "--no-draws"];
    args.extend_from_slice(&SHORT);
    ok(&args);
    let (c, err) = code(&["regress", "--results", s(&r), "--data", s(&d)]);
    assert_eq!(c, 2);
    assert!(err.contains("three"), "{err}");
}
