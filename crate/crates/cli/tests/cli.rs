use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use forcedvi_cli::output::{OrderTable, TrajectoryTable};
use serde_json::Value;
use tempfile::TempDir;

const TRUNCATED_ORDER: &str = r#"{
  "system": {"name": "damped_particle", "params": {"alpha": 1.0}},
  "discretization": {"kind": "truncated_exact", "order_r": 2},
  "experiment": {"kind": "order", "h_grid": [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125],
                 "initial_state": {"q": 0.0, "v": 1.0}, "global_horizon": 1.0}
}"#;

const EXACTNESS: &str = r#"{
  "system": {"name": "damped_particle", "params": {"alpha": 1.0}},
  "experiment": {"kind": "exactness", "h": 0.25, "N": 8, "initial_state": {"q": 0.0, "v": 1.0}}
}"#;

const SIMULATE: &str = r#"{
  "system": {"name": "forced_pendulum", "params": {"gravity": 9.81, "damping": 0.3, "torque": 0.2}},
  "discretization": {"kind": "linear"},
  "experiment": {"kind": "simulate", "h": 0.05, "N": 40, "initial_state": {"q": 0.4, "v": -0.2}}
}"#;

const CORRESPOND: &str = r#"{
  "system": {"name": "damped_duffing", "params": {"linear": 1.0, "cubic": 0.5, "damping": 0.2}},
  "discretization": {"kind": "custom-quadrature", "rule": "gauss2", "alpha": "symmetric"},
  "experiment": {"kind": "correspond", "h_grid": [0.2, 0.1, 0.05], "initial_state": {"q": 0.3, "v": 0.8}}
}"#;

fn run(args: &[&str], config: Option<&str>, dir: &Path, threads: &str) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_forcedvi"));
    cmd.args(args).arg("--out").arg(dir.join("out")).env("FORCEDVI_THREADS", threads);
    if let Some(text) = config {
        let path = dir.join("config.json");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn order_experiment_passes_with_slope_three() {
    let dir = TempDir::new().unwrap();
    let out = run(&["order"], Some(TRUNCATED_ORDER), dir.path(), "1");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    let slope = report["result"]["fit"]["slope"].as_f64().unwrap();
    assert!((slope - 3.0).abs() < 0.1, "slope {slope}");
    assert_eq!(report["result"]["fit"]["verdict"], "pass");
    assert!(report["result"]["global_diagnostic"]["slope"].as_f64().is_some());
    let table = OrderTable::from_csv(&read(dir.path(), "order.csv")).unwrap();
    let errors: Vec<f64> = report["result"]["fit"]["errors"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    assert_eq!(table.rows.iter().map(|r| r.error).collect::<Vec<_>>(), errors);
    assert!(dir.path().join("out/meta.json").exists());
}

#[test]
fn exactness_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(&["exactness"], Some(EXACTNESS), dir.path(), "1");
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert_eq!(report["result"]["ok"], true);
}

#[test]
fn midpoint_exactness_is_a_verdict_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = EXACTNESS.replace(r#""experiment""#, r#""discretization": {"kind": "linear"}, "experiment""#);
    assert_eq!(run(&["exactness"], Some(&cfg), dir.path(), "1").status.code(), Some(2));
}

#[test]
fn order_one_rule_fails_an_order_two_verdict() {
    let dir = TempDir::new().unwrap();
    let cfg = TRUNCATED_ORDER
        .replace(r#""kind": "truncated_exact", "order_r": 2"#, r#""kind": "custom-quadrature", "rule": "rectangle", "order_r": 2"#);
    let out = run(&["order"], Some(&cfg), dir.path(), "1");
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn broken_configs_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let missing = TRUNCATED_ORDER.replace(r#""alpha": 1.0"#, "");
    let out = run(&["order"], Some(&missing), dir.path(), "1");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("system.params.alpha"));

    let scalar_grid = TRUNCATED_ORDER.replace("[0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125]", "0.1");
    let out = run(&["order"], Some(&scalar_grid), dir.path(), "1");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment.h_grid"));

    assert_eq!(run(&["order"], Some("not json"), dir.path(), "1").status.code(), Some(1));
    assert_eq!(run(&["simulate"], Some(EXACTNESS), dir.path(), "1").status.code(), Some(1));
    assert_eq!(run(&["order"], None, dir.path(), "1").status.code(), Some(1));
    assert_eq!(run(&["bogus"], None, dir.path(), "1").status.code(), Some(1));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    for (cmd, cfg, files) in [
        ("order", TRUNCATED_ORDER, &["report.json", "order.csv"][..]),
        ("simulate", SIMULATE, &["trajectory.csv"][..]),
        ("correspond", CORRESPOND, &["report.json"][..]),
    ] {
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        assert_eq!(run(&[cmd], Some(cfg), a.path(), "1").status.code(), Some(0), "{cmd}");
        assert_eq!(run(&[cmd], Some(cfg), b.path(), "4").status.code(), Some(0), "{cmd}");
        for f in files {
            assert_eq!(read(a.path(), f), read(b.path(), f), "{cmd}: {f}");
        }
    }
}

#[test]
fn trajectory_csv_round_trips() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["simulate"], Some(SIMULATE), dir.path(), "1").status.code(), Some(0));
    let text = read(dir.path(), "trajectory.csv");
    assert!(text.starts_with("k,t,q1,v1,residual\n"));
    let table = TrajectoryTable::from_csv(&text).unwrap();
    assert_eq!(table.rows.len(), 41);
    assert!(table.rows[0].residual.is_none() && table.rows[40].residual.is_none());
    assert!(table.rows[1..40].iter().all(|r| r.residual.unwrap() <= 1e-11));
    assert_eq!(table.to_csv().unwrap(), text);
    assert_eq!(table.rows[0].q, vec![0.4]);
    assert_eq!(table.rows[0].v, vec![-0.2]);
}

#[test]
fn selftest_is_seeded_and_passes() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(run(&["selftest", "--seed", "11"], None, a.path(), "1").status.code(), Some(0));
    assert_eq!(run(&["selftest", "--seed", "11"], None, b.path(), "1").status.code(), Some(0));
    assert_eq!(read(a.path(), "report.json"), read(b.path(), "report.json"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = forcedvi_cli::config::parse_config(&fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        assert!(stem.starts_with(cfg.experiment.kind.as_str()), "{stem}");
        seen += 1;
    }
    assert!(seen >= 4);
}
