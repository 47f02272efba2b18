use std::path::Path;
use std::process::Command;

use optoprep::io::{read_table, TRAJECTORY_SCHEMA};
use optoprep::optimizer::OptimizationReport;

fn optoprep(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_optoprep")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn sidecar(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(optoprep(&["optimize", "--horizon", "0"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(optoprep(&["noise-sweep", "--out", out]).status.code(), Some(2));
    assert_eq!(optoprep(&["noise-sweep", "--pulse", "/nonexistent/report.json", "--out", out]).status.code(), Some(2));
    assert_eq!(optoprep(&["optimize", "--k", "abc"]).status.code(), Some(2));
}

#[test]
fn verify_passes_by_default_and_flags_an_odd_cavity_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("ok");
    let bad = dir.path().join("bad");
    assert!(optoprep(&["verify", "--out", ok.to_str().unwrap()]).status.success());
    let failed = optoprep(&["verify", "--omega-c-ratio", "21", "--out", bad.to_str().unwrap()]);
    assert_eq!(failed.status.code(), Some(1));
    let (_, rows) = read_table(&bad.join("verify.csv"), "optoprep.verify/1").unwrap();
    let half = rows.iter().find(|r| r[0] == "half_period_identity_numeric").expect("half-period row");
    assert_eq!(half[1], "false");
    let (_, rows) = read_table(&ok.join("verify.csv"), "optoprep.verify/1").unwrap();
    assert!(rows.iter().all(|r| r[1] == "true"));
}

#[test]
fn optimize_simulate_and_sweep_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let args = [
        "optimize", "--k", "1/16", "--horizon", "2", "--restarts", "1", "--cavity-dim", "24", "--mech-dim", "6",
        "--target", "superposition", "--out", out_s,
    ];
    assert!(optoprep(&args).status.success());
    let report_path = out.join("report.json");
    let first = std::fs::read_to_string(&report_path).unwrap();
    let report = OptimizationReport::from_json(&first).unwrap();
    assert_eq!(report.best_amplitudes.len(), 2);
    assert!(report.best_theta.is_some());
    assert!(report.achieved_fidelity_exact.is_some());
    let (header, rows) = read_table(&out.join("trajectory.csv"), TRAJECTORY_SCHEMA).unwrap();
    assert_eq!(header.len(), 24 + 2);
    assert!(rows.len() > 2);
    let side = sidecar(&out.join("trajectory.json"));
    assert_eq!(side["config_hash"].as_str().unwrap().len(), 64);
    assert!(out.join("pattern.json").exists());

    // same config, same seed: identical report
    assert!(optoprep(&args).status.success());
    assert_eq!(std::fs::read_to_string(&report_path).unwrap(), first);

    let pulse = report_path.to_str().unwrap();
    for prop in ["effective2", "effective3", "exact"] {
        let o = optoprep(&["simulate", "--pulse", pulse, "--propagator", prop, "--cavity-dim", "24", "--mech-dim", "6", "--out", out_s]);
        assert!(o.status.success(), "{prop}: {}", String::from_utf8_lossy(&o.stderr));
        let f = sidecar(&out.join("simulation.json"))["results"]["fidelity"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f));
    }

    let cfg = dir.path().join("noise.json");
    std::fs::write(&cfg, r#"{"noise_cavity_dim": 12, "noise_mech_dim": 4}"#).unwrap();
    let o = optoprep(&[
        "noise-sweep", "--config", cfg.to_str().unwrap(), "--pulse", pulse, "--sweep", "kappa", "--kappa", "0,1e-3",
        "--out", out_s,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_table(&out.join("noise_kappa.csv"), "optoprep.noise/1").unwrap();
    let fl = header.iter().position(|h| h == "F_l").unwrap();
    let fi = header.iter().position(|h| h == "F_i").unwrap();
    let lossless: f64 = rows[0][fi].parse().unwrap();
    assert!((lossless - 1.0).abs() < 1e-4);
    assert!(rows[1][fl].parse::<f64>().unwrap() < rows[0][fl].parse::<f64>().unwrap());

    let o = optoprep(&[
        "sweep-k", "--k-grid", "1/26,1/16", "--horizons", "1", "--restarts", "1", "--cavity-dim", "20", "--mech-dim", "4",
        "--out", out_s,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_table(&out.join("sweep_k.csv"), "optoprep.sweep-k/1").unwrap();
    assert_eq!(rows.len(), 2);
    assert!(sidecar(&out.join("sweep_k.json"))["results"]["best_k"].is_array());
}
