use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deepswitch"));
    c.env("RUST_LOG", "warn");
    c
}

fn fixtures() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

const SMALL: &str = r#"{
  "problem": {"builtin": {"name": "gbm3regime", "d": 2}},
  "grid": {"n_dates": 3, "substeps": 4},
  "seed": 5,
  "dual": {"epochs": 3, "batch_size": 128, "baseline": {"form": "linear_in_n", "rate": 0.45}},
  "primal": {"epochs": 3, "batch_size": 128},
  "evaluation": {"n_paths": 2048, "chunk": 512, "region_date": 1, "region_states": 40}
}"#;

#[test]
fn certify_passes_on_bundled_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("certify").args(fixtures()).arg("--out").arg(dir.path()).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(!stdout.contains("FAIL"));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), fixtures().len());
    let r = report(dir.path());
    assert_eq!(r["passed"], true);
    assert_eq!(r["command"], "certify");
    assert!(r["git_describe"].is_string());
    assert!(r["config"]["certify"].is_object());
    for inst in r["result"]["instances"].as_array().unwrap() {
        assert_eq!(inst["brute_force"]["passed"], true);
    }
}

#[test]
fn certify_fails_without_strict_costs() {
    let dir = tempfile::tempdir().unwrap();
    let mut model: Value = serde_json::from_str(&fs::read_to_string(&fixtures()[0]).unwrap()).unwrap();
    for level in model["costs"].as_array_mut().unwrap() {
        for node in level.as_array_mut().unwrap() {
            for row in node.as_array_mut().unwrap() {
                for c in row.as_array_mut().unwrap() {
                    *c = 0.0.into();
                }
            }
        }
    }
    let lattice = dir.path().join("free.json");
    fs::write(&lattice, model.to_string()).unwrap();
    let out = run(&["certify", lattice.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(dir.path())["passed"], false);
}

#[test]
fn certify_generates_random_instances_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"certify": {"instances": 4}}"#).unwrap();
    let out = run(&["certify", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(report(dir.path())["result"]["instances"].as_array().unwrap().len(), 4);
}

#[test]
fn simulate_twice_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(&["simulate", "--paths", "64", "--seed", "9", "--desk-scale"], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let dump = |d: &tempfile::TempDir| fs::read(d.path().join("paths.bin")).unwrap();
    assert!(!dump(&a).is_empty());
    assert_eq!(dump(&a), dump(&b));
    let mut ra = report(a.path());
    let mut rb = report(b.path());
    ra["config"]["output"] = Value::Null;
    rb["config"]["output"] = Value::Null;
    assert_eq!(ra, rb);

    let c = tempfile::tempdir().unwrap();
    run(&["simulate", "--paths", "64", "--seed", "10", "--desk-scale"], c.path());
    assert_ne!(dump(&a), dump(&c));
}

#[test]
fn malformed_config_reports_a_json_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"dual": {"epochs": "many"}}"#).unwrap();
    let out = run(&["train-dual", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/dual/epochs"), "{err}");

    fs::write(&cfg, r#"{"dual": {"epocs": 3}}"#).unwrap();
    let out = run(&["train-dual", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epocs"));
}

#[test]
fn missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["evaluate", "--desk-scale"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dual.ckpt") && err.contains("not found"), "{err}");
}

#[test]
fn desk_scale_and_config_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "{}").unwrap();
    let out = run(&["certify", "--config", cfg.to_str().unwrap(), "--desk-scale"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn small_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.json");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap();
    for cmd in ["train-dual", "train-primal", "evaluate", "hedge", "regions"] {
        let out = run(&[cmd, "--config", c, "--workers", "1"], dir.path());
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let r = report(dir.path());
        assert_eq!(r["command"], cmd);
        assert_eq!(r["config"]["seed"], 5);
        assert_eq!(r["config"]["dual"]["seed"], 5);
    }
    for f in ["dual.ckpt", "policy.ckpt", "trace.csv", "primal_trace.csv", "bounds.csv", "hedge.csv", "regions.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,stage,loss,grad_norm"));
    let bounds = fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
    let header = bounds.lines().next().unwrap();
    assert!(header.starts_with("ub_1,ub_2,ub_3,ub_se_1"));
    assert!(header.contains("gap_max,cvar95,cvar99"));
    let regions = fs::read_to_string(dir.path().join("regions.csv")).unwrap();
    assert_eq!(regions.lines().count(), 1 + 40 * 3);
    let ckpt = fs::read(dir.path().join("dual.ckpt")).unwrap();
    let text = String::from_utf8_lossy(&ckpt);
    assert!(text.contains("git_describe"));

    // D1 loss flag reaches the config
    let out = run(&["train-dual", "--config", c, "--loss", "d1"], dir.path());
    assert!(out.status.success());
    assert_eq!(report(dir.path())["config"]["dual"]["loss"], "upper");
}
