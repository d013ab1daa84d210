use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trades_cli::{ExperimentConfig, EXIT_FAIL, EXIT_OK, EXIT_USAGE, OUT_DIR_ENV};

fn trades(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trades"));
    cmd.args(args).env_remove(OUT_DIR_ENV);
    if let Some(dir) = env_out {
        cmd.env(OUT_DIR_ENV, dir);
    }
    cmd.output().expect("spawn trades")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const AFFINE: &str = "spec_version = 1\nscenario = \"affine\"\n";

#[test]
fn run_writes_trace_report_and_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", AFFINE);
    let out = tmp.path().join("out");
    let res = trades(&["run", s(&cfg), "--out", s(&out)], None);
    assert_eq!(
        res.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("PASS"));

    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next(),
        Some("t,err_x,est_err_max,disagreement,step_norm")
    );
    let errs: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(*errs.last().unwrap() <= 1e-8);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["trades"]["verdict"], "pass");
    assert!(report["trades"]["fit"]["a2"].as_f64().unwrap() > 0.0);

    // The echo is a complete config: rerunning from it reproduces the trace.
    let echo = std::fs::read_to_string(out.join("config.echo")).unwrap();
    let parsed = ExperimentConfig::parse(&echo).unwrap();
    assert_eq!(parsed.trades.gamma, 0.01);
    let echo_cfg = write_config(tmp.path(), "echo.toml", &echo);
    let again = tmp.path().join("again");
    let res = trades(&["run", s(&echo_cfg), "--out", s(&again)], None);
    assert_eq!(res.status.code(), Some(EXIT_OK));
    assert_eq!(
        std::fs::read(again.join("trace.csv")).unwrap(),
        trace.into_bytes()
    );
}

#[test]
fn malformed_config_is_a_usage_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        "spec_version = 1\nscenario = \"affine\"\n[trades\ngamma = 1\n",
    );
    let out = tmp.path().join("out");
    let res = trades(&["run", s(&cfg), "--out", s(&out)], None);
    assert_eq!(res.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
    assert!(!out.exists());

    let unknown = write_config(
        tmp.path(),
        "unknown.toml",
        "spec_version = 1\nscenario = \"affine\"\ngama = 1\n",
    );
    assert_eq!(
        trades(&["run", s(&unknown), "--out", s(&out)], None)
            .status
            .code(),
        Some(EXIT_USAGE)
    );
    let version = write_config(
        tmp.path(),
        "v.toml",
        "spec_version = 99\nscenario = \"affine\"\n",
    );
    assert_eq!(
        trades(&["validate", s(&version)], None).status.code(),
        Some(EXIT_USAGE)
    );
    assert_eq!(
        trades(&["run", s(&tmp.path().join("missing.toml"))], None)
            .status
            .code(),
        Some(EXIT_USAGE)
    );
    assert_eq!(
        trades(&["frobnicate", s(&cfg)], None).status.code(),
        Some(EXIT_USAGE)
    );
    assert_eq!(
        trades(&["run", s(&cfg), "--oracle", "maybe"], None)
            .status
            .code(),
        Some(EXIT_USAGE)
    );
    assert!(!out.exists());
}

#[test]
fn output_directory_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let from_cfg = tmp.path().join("from_config");
    let body = format!(
        "{AFFINE}out_dir = {:?}\n[trades]\nmax_iter = 200\n",
        s(&from_cfg)
    );
    let cfg = write_config(tmp.path(), "a.toml", &body);

    let env_dir = tmp.path().join("from_env");
    trades(&["run", s(&cfg)], Some(&env_dir));
    assert!(env_dir.join("trace.csv").exists());
    assert!(!from_cfg.exists());

    let flag_dir = tmp.path().join("from_flag");
    trades(&["run", s(&cfg), "--out", s(&flag_dir)], Some(&env_dir));
    assert!(flag_dir.join("trace.csv").exists());

    trades(&["run", s(&cfg)], None);
    assert!(from_cfg.join("trace.csv").exists());
}

#[test]
fn divergent_step_exits_with_failure_and_keeps_the_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "d.toml",
        &format!("{AFFINE}[trades]\ngamma = 10.0\nmax_iter = 2000\n"),
    );
    let out = tmp.path().join("out");
    let res = trades(&["run", s(&cfg), "--out", s(&out)], None);
    assert_eq!(res.status.code(), Some(EXIT_FAIL));
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("FAIL"));
    assert!(out.join("trace.csv").exists());
}

#[test]
fn seed_and_oracle_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.toml",
        &format!("{AFFINE}[trades]\nmax_iter = 300\n"),
    );
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    trades(&["run", s(&cfg), "--out", s(&a)], None);
    trades(&["run", s(&cfg), "--out", s(&b), "--seed", "7"], None);
    let trace = |d: &Path| std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert_ne!(trace(&a), trace(&b));
    assert!(std::fs::read_to_string(b.join("config.echo"))
        .unwrap()
        .contains("seed = 7"));

    trades(&["run", s(&cfg), "--out", s(&c), "--oracle", "off"], None);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(c.join("report.json")).unwrap()).unwrap();
    assert!(report["oracle"].is_null());
    assert!(trace(&c).lines().nth(1).unwrap().split(',').nth(1) == Some("NaN"));
}

#[test]
fn validate_reports_each_assumption() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = write_config(
        tmp.path(),
        "ok.toml",
        &format!("{AFFINE}[graph]\neta = 0.0\n"),
    );
    let res = trades(&["validate", s(&ok)], None);
    assert_eq!(res.status.code(), Some(EXIT_OK));
    let text = String::from_utf8_lossy(&res.stdout).to_string();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    for check in [
        "strong monotonicity",
        "strong connectivity",
        "doubly stochastic",
        "idempotence",
    ] {
        assert!(text.contains(check), "missing {check}: {text}");
    }

    let neg = write_config(
        tmp.path(),
        "neg.toml",
        "spec_version = 1\nscenario = \"voltage\"\n[voltage]\nn_agents = 8\nhorizon = 6\npenalty_scale = -1.0\n",
    );
    let res = trades(&["validate", s(&neg)], None);
    assert_eq!(res.status.code(), Some(EXIT_FAIL));
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL"));
}

#[test]
fn sweep_writes_summary_and_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.toml",
        &format!("{AFFINE}[sweep]\ngammas = [0.01, 0.05]\ndeltas = [0.5, 0.9]\n"),
    );
    let out = tmp.path().join("out");
    let res = trades(&["sweep", s(&cfg), "--out", s(&out)], None);
    assert_eq!(
        res.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let summary = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("gamma,delta,converged,a2,iters"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(
        rows.iter().all(|r| r.split(',').nth(2) == Some("true")),
        "{summary}"
    );
    assert_eq!(std::fs::read_dir(out.join("cells")).unwrap().count(), 4);

    let empty = write_config(
        tmp.path(),
        "e.toml",
        &format!("{AFFINE}[sweep]\ngammas = []\n"),
    );
    assert_eq!(
        trades(&["sweep", s(&empty), "--out", s(&out)], None)
            .status
            .code(),
        Some(EXIT_USAGE)
    );
}
