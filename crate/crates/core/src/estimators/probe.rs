//! Checks that several estimators, each from several starting points, land
//! on the same matrix.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::measurement::MeasurementRecord;
use crate::rng::derive_seed;
use crate::sensing::SensingMap;

use super::{run_estimator, EstimatorKind, SolverConfig};

/// Largest pairwise Frobenius distance for a PASS.
pub const UNIQUENESS_THRESHOLD: f64 = 1e-5;
/// Random-initialization restarts per estimator, on top of the default start.
pub const RESTARTS: usize = 5;

#[derive(Clone, Debug)]
pub struct ProbeRun {
    pub estimator: EstimatorKind,
    /// 0 for the default initialization, `1..=RESTARTS` for random ones.
    pub restart: usize,
    /// `None` when the estimator returned an error.
    pub rho_hat: Option<HermitianMatrix>,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct UniquenessReport {
    pub runs: Vec<ProbeRun>,
    /// Infinite when any run failed.
    pub max_spread: f64,
    pub pass: bool,
}

impl UniquenessReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = {
            let mut v: Vec<_> = self.runs.iter().map(|r| r.estimator.name()).collect();
            v.dedup();
            v
        };
        writeln!(out, "estimators={}", names.join(",")).expect("writing to a String");
        writeln!(out, "runs={}", self.runs.len()).expect("writing to a String");
        writeln!(out, "max_spread={:e}", self.max_spread).expect("writing to a String");
        writeln!(out, "threshold={UNIQUENESS_THRESHOLD:e}").expect("writing to a String");
        writeln!(out, "result={}", if self.pass { "PASS" } else { "FAIL" }).expect("writing to a String");
        out
    }
}

/// Runs every estimator from the default start and from [`RESTARTS`]
/// random starts on noiseless data and reports the largest pairwise
/// Frobenius distance between the outputs.
pub fn uniqueness_probe(
    map: &SensingMap,
    record: &MeasurementRecord,
    estimators: &[EstimatorKind],
    config: &SolverConfig,
) -> Result<UniquenessReport> {
    if estimators.len() < 2 {
        return Err(Error::Domain("the uniqueness probe needs at least two estimators".into()));
    }
    if !record.is_ideal() {
        return Err(Error::Domain("the uniqueness probe needs a noiseless record".into()));
    }
    let mut runs = Vec::new();
    for &kind in estimators {
        for restart in 0..=RESTARTS {
            let cfg = SolverConfig {
                random_init: restart > 0,
                seed: derive_seed(config.seed, &[kind as u64, restart as u64]),
                ..config.clone()
            };
            let run = match run_estimator(kind, map, record, 0.0, &cfg) {
                Ok(r) => ProbeRun {
                    estimator: kind,
                    restart,
                    converged: r.converged,
                    rho_hat: Some(r.rho_hat),
                },
                Err(_) => ProbeRun {
                    estimator: kind,
                    restart,
                    converged: false,
                    rho_hat: None,
                },
            };
            runs.push(run);
        }
    }
    let mut max_spread = 0.0f64;
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            let spread = match (&a.rho_hat, &b.rho_hat) {
                (Some(x), Some(y)) => x.frobenius_distance(y),
                _ => f64::INFINITY,
            };
            max_spread = max_spread.max(spread);
        }
    }
    Ok(UniquenessReport {
        runs,
        max_spread,
        pass: max_spread < UNIQUENESS_THRESHOLD,
    })
}
