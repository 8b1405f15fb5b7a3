//! Sweeps over basis counts and estimators, averaged over Haar-random states.

mod output;

pub use output::{
    emit_outputs, format_report_csv, format_trials_csv, parse_report_csv, parse_trials_csv, plot_script,
};

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{run_estimator, EstimatorKind, SolverConfig};
use crate::hermitian::{random_density_matrix, HermitianMatrix};
use crate::measurement::{
    born_probabilities, estimate_noise_bound_with_factor, sample_frequencies, MeasurementRecord, DEFAULT_NOISE_FACTOR,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sensing::{pauli_sensing_map, random_pauli_basis_set, SensingMap};

// seed-path tags
const STATE: u64 = 1;
const BASES: u64 = 2;
const SAMPLES: u64 = 3;
const SOLVER: u64 = 4;

/// Largest supported register; the dense design matrix has `6ⁿ·4ⁿ` entries at full IC.
pub const MAX_QUBITS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_qubits: usize,
    /// Numbers of Pauli bases to sweep, each in `[1, 3ⁿ]`.
    pub basis_counts: Vec<usize>,
    pub estimators: Vec<EstimatorKind>,
    pub n_trials: usize,
    /// Repetitions per basis; 0 runs on exact probabilities.
    pub n_rep: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Rank of the random true state.
    pub rank_of_truth: usize,
    /// Noise bound passed to noise-aware estimators, in multinomial standard deviations.
    pub noise_factor: f64,
    /// Divide every POVM by the number of bases so that all operators sum to `𝟙`.
    pub rescale: bool,
    /// Measure wall-clock time per estimator; otherwise the runtime column is 0.
    pub record_timing: bool,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_qubits: 3,
            basis_counts: (1..=13).map(|k| 2 * k).chain([27]).collect(),
            estimators: vec![EstimatorKind::NnlsPsd],
            n_trials: 10,
            n_rep: 0,
            seed: 0,
            output_dir: PathBuf::from("out"),
            rank_of_truth: 1,
            noise_factor: DEFAULT_NOISE_FACTOR,
            rescale: true,
            record_timing: false,
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > MAX_QUBITS {
            return Err(Error::Domain(format!("n_qubits must be in [1, {MAX_QUBITS}], got {}", self.n_qubits)));
        }
        let total = 3usize.pow(self.n_qubits as u32);
        if self.basis_counts.is_empty() {
            return Err(Error::Domain("basis_counts is empty".into()));
        }
        if let Some(m) = self.basis_counts.iter().find(|&&m| m == 0 || m > total) {
            return Err(Error::Domain(format!("basis count {m} outside [1, {total}]")));
        }
        if self.estimators.is_empty() {
            return Err(Error::Domain("no estimators listed".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Domain("n_trials must be at least 1".into()));
        }
        if self.rank_of_truth == 0 || self.rank_of_truth > self.dim() {
            return Err(Error::Domain(format!("rank_of_truth must be in [1, {}]", self.dim())));
        }
        if !(self.noise_factor > 0.0) {
            return Err(Error::Domain("noise_factor must be positive".into()));
        }
        if !self.rescale && self.estimators.contains(&EstimatorKind::TraceMinPsd) {
            return Err(Error::Domain("trace_min_psd needs rescale = true".into()));
        }
        self.solver.validate()
    }
}

/// One estimator run on one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub m_bases: usize,
    pub estimator: EstimatorKind,
    /// NaN when the estimator failed.
    pub infidelity: f64,
    pub frobenius: f64,
    pub iterations: usize,
    pub runtime_seconds: f64,
    pub converged: bool,
}

/// Aggregate over trials for one `(m, estimator)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub m_bases: usize,
    pub estimator: EstimatorKind,
    pub mean_infidelity: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std_infidelity: f64,
    pub mean_frobenius: f64,
    pub mean_iterations: f64,
    pub mean_runtime_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub trials: Vec<TrialRow>,
}

impl ExperimentReport {
    pub fn row(&self, m_bases: usize, estimator: EstimatorKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.m_bases == m_bases && r.estimator == estimator)
    }

    /// Per-trial rows for one `(m, estimator)` pair, in trial order.
    pub fn trials_for(&self, m_bases: usize, estimator: EstimatorKind) -> Vec<&TrialRow> {
        self.trials
            .iter()
            .filter(|r| r.m_bases == m_bases && r.estimator == estimator)
            .collect()
    }
}

/// Runs the sweep. Jobs `(trial, m)` run in parallel with seeds derived
/// from `(seed, trial, m)`, and rows are sorted afterwards, so the report
/// does not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let truths = (0..config.n_trials)
        .map(|trial| truth_for(config, trial))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..config.n_trials)
        .flat_map(|trial| config.basis_counts.iter().map(move |&m| (trial, m)))
        .collect();
    let mut trials: Vec<TrialRow> = jobs
        .par_iter()
        .map(|&(trial, m)| run_job(config, trial, m, &truths[trial]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    trials.sort_by_key(|t| (t.m_bases, t.estimator, t.trial));
    let rows = aggregate(&trials);
    Ok(ExperimentReport {
        config: config.clone(),
        rows,
        trials,
    })
}

/// The inputs one job of the sweep sees.
#[derive(Clone, Debug)]
pub struct TrialInstance {
    pub truth: HermitianMatrix,
    pub map: SensingMap,
    pub record: MeasurementRecord,
    pub solver: SolverConfig,
}

fn truth_for(config: &ExperimentConfig, trial: usize) -> Result<HermitianMatrix> {
    let mut rng = rng_from_seed(derive_seed(config.seed, &[trial as u64, STATE]));
    random_density_matrix(config.dim(), config.rank_of_truth, &mut rng)
}

/// Rebuilds the state, map, record and solver settings of job `(trial, m)`
/// exactly as [`run_experiment`] does.
pub fn trial_instance(config: &ExperimentConfig, trial: usize, m: usize) -> Result<TrialInstance> {
    config.validate()?;
    let truth = truth_for(config, trial)?;
    instance_with_truth(config, trial, m, truth)
}

fn instance_with_truth(config: &ExperimentConfig, trial: usize, m: usize, truth: HermitianMatrix) -> Result<TrialInstance> {
    let bases = random_pauli_basis_set(config.n_qubits, m, derive_seed(config.seed, &[trial as u64, BASES]))?;
    let map = pauli_sensing_map(config.n_qubits, &bases, config.rescale)?;
    let ideal = born_probabilities(&map, &truth)?;
    let record = if config.n_rep > 0 {
        let mut sampled = sample_frequencies(&ideal, config.n_rep, derive_seed(config.seed, &[trial as u64, m as u64, SAMPLES]))?;
        sampled.epsilon = estimate_noise_bound_with_factor(&sampled, config.noise_factor);
        sampled
    } else {
        ideal
    };
    let solver = SolverConfig {
        seed: derive_seed(config.seed, &[trial as u64, m as u64, SOLVER]),
        ..config.solver.clone()
    };
    Ok(TrialInstance { truth, map, record, solver })
}

fn run_job(config: &ExperimentConfig, trial: usize, m: usize, truth: &HermitianMatrix) -> Result<Vec<TrialRow>> {
    let TrialInstance { truth, map, record, solver } = instance_with_truth(config, trial, m, truth.clone())?;
    let truth = &truth;
    let mut rows = Vec::with_capacity(config.estimators.len());
    for &kind in &config.estimators {
        let start = Instant::now();
        let outcome = run_estimator(kind, &map, &record, record.epsilon, &solver);
        let runtime = if config.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
        let row = match outcome.and_then(|r| Ok((r.infidelity(truth)?, r))) {
            Ok((infidelity, r)) => TrialRow {
                trial,
                m_bases: m,
                estimator: kind,
                infidelity,
                frobenius: r.frobenius_distance(truth),
                iterations: r.iterations,
                runtime_seconds: runtime,
                converged: r.converged,
            },
            Err(_) => TrialRow {
                trial,
                m_bases: m,
                estimator: kind,
                infidelity: f64::NAN,
                frobenius: f64::NAN,
                iterations: 0,
                runtime_seconds: runtime,
                converged: false,
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Means over the finite entries of each `(m, estimator)` group; rows are
/// sorted by `m`, then estimator.
pub fn aggregate(trials: &[TrialRow]) -> Vec<ReportRow> {
    let mut keys: Vec<(usize, EstimatorKind)> = trials.iter().map(|t| (t.m_bases, t.estimator)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(m, kind)| {
            let group: Vec<&TrialRow> = trials.iter().filter(|t| t.m_bases == m && t.estimator == kind).collect();
            let infidelities: Vec<f64> = group.iter().map(|t| t.infidelity).collect();
            let (mean_infidelity, std_infidelity) = mean_and_std(&infidelities);
            ReportRow {
                m_bases: m,
                estimator: kind,
                mean_infidelity,
                std_infidelity,
                mean_frobenius: mean_and_std(&group.iter().map(|t| t.frobenius).collect::<Vec<_>>()).0,
                mean_iterations: mean_and_std(&group.iter().map(|t| t.iterations as f64).collect::<Vec<_>>()).0,
                mean_runtime_seconds: mean_and_std(&group.iter().map(|t| t.runtime_seconds).collect::<Vec<_>>()).0,
            }
        })
        .collect()
}

/// Mean and sample standard deviation of the finite values; NaN when there are none.
fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
