//! End-to-end runs of the `habitdp` binary on a small grid.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use habitdp::manifest::Manifest;

const SMALL: &str = r#"
grid.n_steps = 12
grid.w_nodes = 21
grid.cbar_nodes = 9
simulation.n_paths = 200
simulation.master_seed = 11
preferences.beta = 1.0
"#;

fn habitdp(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("config.toml");
    if !cfg.exists() {
        fs::write(&cfg, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_habitdp"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .env_remove("HABITDP_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn merton_prints_oracle_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    fs::write(dir.path().join("config.toml"), "preferences.rho = 0.1\nsimulation.n_paths = 50").unwrap();
    let text = ok(&habitdp(dir.path(), &["merton", "--out", out.to_str().unwrap()]));
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .unwrap_or_else(|| panic!("{key} missing in {text}"))
            .parse()
            .unwrap()
    };
    assert!((value("omega_star") - 0.64).abs() < 1e-12);
    assert!((value("nu") - 0.1636).abs() < 1e-12);
    assert!((value("consumption_t0_w0") - 203_150.0).abs() < 50.0);
    let policy = String::from_utf8(read(&out, "merton_policy.csv")).unwrap();
    assert_eq!(policy.lines().next(), Some("step,t,C_over_W,omega"));
    assert_eq!(policy.lines().count(), 101);
    Manifest::read(&out.join("manifest.json")).unwrap().verify(&out).unwrap();
}

#[test]
fn snapshot_then_simulate_matches_fused_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (a_s, b_s) = (a.to_str().unwrap(), b.to_str().unwrap());

    let solved = ok(&habitdp(dir.path(), &["solve", "--out", a_s]));
    assert!(solved.contains("consumption_t1_w0 = "));
    let snap = a.join("tables.bin");
    ok(&habitdp(
        dir.path(),
        &["simulate", "--snapshot", snap.to_str().unwrap(), "--out", a_s],
    ));
    ok(&habitdp(dir.path(), &["simulate", "--tables", "--out", b_s]));

    for f in ["tables.csv", "ensemble.csv", "curve.csv", "paths.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    let tables = String::from_utf8(read(&a, "tables.csv")).unwrap();
    assert_eq!(
        tables.lines().next(),
        Some("step_index,t,W,Cbar,C_opt,omega_opt,J")
    );
    let ensemble = String::from_utf8(read(&b, "ensemble.csv")).unwrap();
    assert_eq!(
        ensemble.lines().next(),
        Some("step,t,mean_W,std_W,mean_C,std_C,mean_omega,std_omega,mean_S")
    );
    assert_eq!(
        String::from_utf8(read(&b, "paths.csv")).unwrap().lines().next(),
        Some("path_id,step,t,stock,W,C,Cbar,omega")
    );
    assert_eq!(
        String::from_utf8(read(&b, "curve.csv")).unwrap().lines().next(),
        Some("t,E_W,E_C,E_omega,monotone_flag")
    );
    let m = Manifest::read(&b.join("manifest.json")).unwrap();
    assert_eq!(m.subcommand, "simulate");
    assert_eq!(m.master_seed, 11);
    assert_eq!(m.files.len(), 4);
    m.verify(&b).unwrap();
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "3", "3"].iter().enumerate() {
        let out = dir.path().join(format!("t{k}"));
        ok(&habitdp(
            dir.path(),
            &["simulate", "--tables", "--threads", threads, "--out", out.to_str().unwrap()],
        ));
        outputs.push(
            ["tables.csv", "ensemble.csv", "curve.csv", "paths.csv"]
                .map(|f| read(&out, f)),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn seed_flag_changes_the_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&habitdp(dir.path(), &["simulate", "--seed", "1", "--out", a.to_str().unwrap()]));
    ok(&habitdp(dir.path(), &["simulate", "--seed", "2", "--out", b.to_str().unwrap()]));
    assert_ne!(read(&a, "ensemble.csv"), read(&b, "ensemble.csv"));
    assert_eq!(Manifest::read(&b.join("manifest.json")).unwrap().master_seed, 2);
}

#[test]
fn compare_writes_side_by_side_series() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("config.toml"),
        format!(
            "{SMALL}\nexperiment.cells = [{{ name = \"m\", beta = 0.0, rho = 0.1 }}, {{ name = \"h\", beta = 1.0, rho = 0.1, bequest = 0.2 }}]\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("cmp");
    ok(&habitdp(dir.path(), &["compare", "--out", out.to_str().unwrap()]));
    for f in [
        "compare_mean_C.csv",
        "compare_mean_omega.csv",
        "compare_mean_W.csv",
        "compare_sensitivity_C.csv",
        "compare_path0_C.csv",
        "compare_path0_omega.csv",
        "compare_curves.csv",
        "compare_bequest.csv",
        "plot.py",
        "cells/m/ensemble.csv",
        "cells/h/summary.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = String::from_utf8(read(&out, "compare_mean_omega.csv")).unwrap();
    assert_eq!(header.lines().next(), Some("step,t,m,h,merton_rho0.1"));
    Manifest::read(&out.join("manifest.json")).unwrap().verify(&out).unwrap();
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line}: {e}"))
}

#[test]
fn invalid_config_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), "market.sigma = -1\n").unwrap();
    let out = dir.path().join("x");
    let err = error_line(&habitdp(dir.path(), &["solve", "--out", out.to_str().unwrap()]));
    assert_eq!(err["error"]["kind"], "invalid");
    assert!(err["error"]["message"].as_str().unwrap().contains("market.sigma"));
}

#[test]
fn parse_error_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), "market.mu = 0.05\nmarket.r = ?\n").unwrap();
    let out = dir.path().join("m");
    let err = error_line(&habitdp(dir.path(), &["merton", "--out", out.to_str().unwrap()]));
    assert_eq!(err["error"]["kind"], "parse");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 2"));
}

#[test]
fn bad_snapshot_and_usage_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a snapshot").unwrap();
    let out = dir.path().join("y");
    let err = error_line(&habitdp(
        dir.path(),
        &["simulate", "--snapshot", junk.to_str().unwrap(), "--out", out.to_str().unwrap()],
    ));
    assert_eq!(err["error"]["kind"], "snapshot");
    let err = error_line(&habitdp(dir.path(), &["bogus"]));
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), SMALL).unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_habitdp"))
            .args(["merton", "--config"])
            .arg(dir.path().join("config.toml"))
            .arg("--out")
            .arg(dir.path().join("env"))
            .env("HABITDP_THREADS", threads)
            .output()
            .unwrap()
    };
    ok(&run("2"));
    let err = error_line(&run("0"));
    assert!(err["error"]["message"].as_str().unwrap().contains("--threads"));
}
