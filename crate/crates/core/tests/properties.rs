//! Property suites, each run under every master seed.

mod common;

use common::{MASTER_SEEDS, SUITES};

fn run_suite(name: &str) {
    let (_, suite) = SUITES.iter().find(|(n, _)| *n == name).expect("suite exists");
    for seed in MASTER_SEEDS {
        if let Err(e) = suite(seed) {
            panic!("{name} failed under master seed {seed}: {e}");
        }
    }
}

#[test]
fn psd_projection() {
    run_suite("psd_projection");
}

#[test]
fn adjoint_identity() {
    run_suite("adjoint_identity");
}

#[test]
fn povm_completeness() {
    run_suite("povm_completeness");
}

#[test]
fn multinomial_convergence() {
    run_suite("multinomial_convergence");
}

#[test]
fn monotone_objectives() {
    run_suite("monotone_objectives");
}

#[test]
fn csv_determinism() {
    run_suite("csv_determinism");
}
