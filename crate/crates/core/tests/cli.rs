//! End-to-end runs of the command-line front end.

use std::path::{Path, PathBuf};
use std::process::Command;

use psd_sense::cli::run;
use psd_sense::harness::parse_report_csv;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn call(args: &[&str]) -> i32 {
    run(std::iter::once("psd-sense").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn binary_without_arguments_prints_usage_and_exits_1() {
    let out = Command::new(env!("CARGO_BIN_EXE_psd-sense")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(call(&["frobnicate"]), 1);
    assert_eq!(call(&["simulate", "--no-such-flag"]), 1);
    assert_eq!(call(&["experiment"]), 1);
    assert_eq!(call(&["estimate", "--record", "/nonexistent/record.csv"]), 1);
    assert_eq!(call(&["--help"]), 0);
}

#[test]
fn simulate_then_estimate_recovers_the_state() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("record.csv");
    let state = dir.path().join("state.txt");
    let result = dir.path().join("estimate.txt");
    let code = call(&[
        "simulate", "--qubits", "2", "--m", "9", "--seed", "4",
        "--state-out", path_str(&state), "--out", path_str(&record),
    ]);
    assert_eq!(code, 0);
    let code = call(&[
        "estimate", "--record", path_str(&record), "--estimator", "max_likelihood_psd",
        "--reference", path_str(&state), "--out", path_str(&result),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&result).unwrap();
    assert!(text.contains("estimator=max_likelihood_psd"));
    let infidelity: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("infidelity="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(infidelity < 1e-6, "{infidelity}");
}

#[test]
fn infeasible_program_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("noisy.csv");
    assert_eq!(
        call(&["simulate", "--qubits", "2", "--n-rep", "100", "--out", path_str(&record)]),
        0
    );
    // sampled Pauli frequencies lie outside the range of the map
    assert_eq!(
        call(&["estimate", "--record", path_str(&record), "--estimator", "trace_min_free"]),
        2
    );
}

#[test]
fn experiment_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        r#"{"n_qubits": 2, "basis_counts": [3, 9], "estimators": ["nnls_psd", "least_squares_free"], "n_trials": 2}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(call(&["experiment", "--config", path_str(&config), "--out", path_str(&out)]), 0);
    let rows = parse_report_csv(&std::fs::read_to_string(out.join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    for name in ["trials.csv", "config.json", "plot.gp"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"n_qubits": 2, "qubitz": 3}"#).unwrap();
    assert_eq!(call(&["experiment", "--config", path_str(&config)]), 1);
}

#[test]
fn shipped_configs_parse() {
    for name in ["fig2a", "fig2b", "fig2b_noisy", "fig3_surrogate", "fig3_extended"] {
        let text = std::fs::read_to_string(configs().join(format!("{name}.json"))).unwrap();
        let config = psd_sense::harness::ExperimentConfig::from_json(&text).unwrap();
        config.validate().unwrap();
    }
}

#[test]
fn check_lemma3_with_the_shipped_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lemma3.txt");
    let config = configs().join("lemma3.json");
    assert_eq!(call(&["check-lemma3", "--config", path_str(&config), "--out", path_str(&out)]), 0);
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.trim_end().ends_with("result=PASS"));
    assert_eq!(text.matches("[instance").count(), 20);
}

#[test]
fn check_bounds_with_the_shipped_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bounds.txt");
    let config = configs().join("bounds.json");
    assert_eq!(call(&["check-bounds", "--config", path_str(&config), "--out", path_str(&out)]), 0);
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.contains("0,4,1"));
    assert!(text.contains("result=PASS"));
}

#[test]
fn rip_reports_a_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rip.txt");
    assert_eq!(
        call(&["rip", "--qubits", "2", "--m", "5", "--samples", "20", "--out", path_str(&out)]),
        0
    );
    assert!(std::fs::read_to_string(out).unwrap().contains("delta_lower"));
}
