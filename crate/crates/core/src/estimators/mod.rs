//! Convex estimators of a density matrix from sensing data.
//!
//! Positivity-free baselines ([`least_squares_free`], [`trace_min_free`],
//! [`nuclear_min_free`]) and positivity-constrained estimators
//! ([`nnls_psd`], [`trace_min_psd`], [`constrained_ls_psd`],
//! [`max_likelihood_psd`]). The iterative ones share the accelerated
//! proximal-gradient loop in `solver`.
//!
//! Data and noise bounds are taken from a [`MeasurementRecord`]: record
//! values are converted to map units with [`SensingMap::unit_factors`], and
//! `epsilon` arguments are bounds on `‖f − p‖₂` in record units, converted
//! with [`SensingMap::epsilon_in_map_units`]. Residuals are reported in map units.

mod constrained;
pub(crate) mod free;
mod probe;
mod psd;
pub(crate) mod solver;

pub use constrained::{
    constrained_ls_max_norm, constrained_ls_norm, smallest_feasible_trace_for, trace_min_psd_direct,
    ConstrainedOutcome, ResidualNorm,
};
pub use free::{least_squares_free, nuclear_min_free, trace_min_free};
pub use probe::{uniqueness_probe, ProbeRun, UniquenessReport, RESTARTS, UNIQUENESS_THRESHOLD};
pub use psd::{constrained_ls_psd, lemma3_trace, max_likelihood_psd, nnls_psd, trace_min_psd, LIKELIHOOD_FLOOR};

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hermitian::{infidelity, random_density_matrix, HermitianMatrix};
use crate::measurement::MeasurementRecord;
use crate::rng::derived_rng;
use crate::sensing::SensingMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Constant step `1/L` from the power-iteration estimate of `‖A‖²`.
    Fixed,
    /// Step halving on the quadratic majorizer, with a mild per-iteration relaxation.
    Backtracking,
}

/// Settings shared by the iterative estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the relative objective decrease stays below this for a few iterations.
    pub gradient_tolerance: f64,
    pub step_rule: StepRule,
    /// Momentum with function-value restart.
    pub acceleration: bool,
    pub seed: u64,
    /// Start from a random full-rank state derived from `seed` instead of `𝟙/d` (or 0).
    pub random_init: bool,
    /// Keep the accepted objective sequence in the diagnostics.
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-9,
            step_rule: StepRule::Backtracking,
            acceleration: true,
            seed: 0,
            random_init: false,
            record_history: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be at least 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Domain("gradient_tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Short stable hash of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Initial density matrix with trace `t`.
    pub(crate) fn initial_state(&self, d: usize, t: f64) -> Result<HermitianMatrix> {
        if self.random_init {
            let mut rng = derived_rng(self.seed, &[0x1417]);
            Ok(random_density_matrix(d, d, &mut rng)? * t)
        } else {
            Ok(HermitianMatrix::maximally_mixed(d) * t)
        }
    }
}

/// Extra information reported alongside an estimate.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    /// The solver output before division by its trace.
    pub raw: Option<HermitianMatrix>,
    /// `‖A[raw] − y‖₂`.
    pub raw_residual: Option<f64>,
    /// Accepted objective values, when `record_history` is set.
    pub objective_history: Vec<f64>,
    /// Trace-minimization over an affine set on which the trace is constant.
    pub objective_constant_on_feasible_set: bool,
    /// `Σf − √m·ε` used by the trace-minimization reduction.
    pub trace_target: Option<f64>,
    /// Outer iterations of augmented-Lagrangian solvers.
    pub outer_iterations: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct EstimatorResult {
    pub estimator: EstimatorKind,
    pub rho_hat: HermitianMatrix,
    /// Final value of the objective the estimator minimizes.
    pub objective: f64,
    /// `‖A[ρ̂] − y‖₂` in map units.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether `rho_hat` is the solver output divided by its trace.
    pub renormalized: bool,
    pub diagnostics: Diagnostics,
}

impl EstimatorResult {
    pub fn frobenius_distance(&self, reference: &HermitianMatrix) -> f64 {
        self.rho_hat.frobenius_distance(reference)
    }

    pub fn infidelity(&self, reference: &HermitianMatrix) -> Result<f64> {
        infidelity(reference, &self.rho_hat)
    }

    /// `key=value` text record; distance metrics are included when a reference is given.
    pub fn to_record(&self, config: &SolverConfig, reference: Option<&HermitianMatrix>) -> Result<String> {
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k}={v}").expect("writing to a String");
        line("estimator", self.estimator.name().to_string());
        line("config_hash", config.hash());
        line("objective", self.objective.to_string());
        line("residual", self.residual.to_string());
        line("iterations", self.iterations.to_string());
        line("converged", self.converged.to_string());
        line("renormalized", self.renormalized.to_string());
        if let Some(r) = reference {
            line("frobenius_distance", self.frobenius_distance(r).to_string());
            line("infidelity", self.infidelity(r)?.to_string());
        }
        Ok(out)
    }
}

/// The registered estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    NnlsPsd,
    TraceMinPsd,
    ConstrainedLsPsd,
    MaxLikelihoodPsd,
    NuclearMinFree,
    LeastSquaresFree,
    TraceMinFree,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::NnlsPsd,
        EstimatorKind::TraceMinPsd,
        EstimatorKind::ConstrainedLsPsd,
        EstimatorKind::MaxLikelihoodPsd,
        EstimatorKind::NuclearMinFree,
        EstimatorKind::LeastSquaresFree,
        EstimatorKind::TraceMinFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::NnlsPsd => "nnls_psd",
            EstimatorKind::TraceMinPsd => "trace_min_psd",
            EstimatorKind::ConstrainedLsPsd => "constrained_ls_psd",
            EstimatorKind::MaxLikelihoodPsd => "max_likelihood_psd",
            EstimatorKind::NuclearMinFree => "nuclear_min_free",
            EstimatorKind::LeastSquaresFree => "least_squares_free",
            EstimatorKind::TraceMinFree => "trace_min_free",
        }
    }

    /// Whether the estimator searches only the PSD cone.
    pub fn is_psd(self) -> bool {
        matches!(
            self,
            EstimatorKind::NnlsPsd
                | EstimatorKind::TraceMinPsd
                | EstimatorKind::ConstrainedLsPsd
                | EstimatorKind::MaxLikelihoodPsd
        )
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator '{s}'")))
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs any registered estimator with its default parameters: `epsilon`
/// feeds the noise-aware estimators, `constrained_ls_psd` uses `t = 1`.
pub fn run_estimator(
    kind: EstimatorKind,
    map: &SensingMap,
    record: &MeasurementRecord,
    epsilon: f64,
    config: &SolverConfig,
) -> Result<EstimatorResult> {
    match kind {
        EstimatorKind::NnlsPsd => nnls_psd(map, record, config),
        EstimatorKind::TraceMinPsd => trace_min_psd(map, record, epsilon, config),
        EstimatorKind::ConstrainedLsPsd => constrained_ls_psd(map, record, 1.0, config),
        EstimatorKind::MaxLikelihoodPsd => max_likelihood_psd(map, record, config),
        EstimatorKind::NuclearMinFree => nuclear_min_free(map, record, epsilon, config),
        EstimatorKind::LeastSquaresFree => least_squares_free(map, record),
        EstimatorKind::TraceMinFree => trace_min_free(map, record),
    }
}

/// Record values converted to the map's units.
pub(crate) fn data_vector(map: &SensingMap, record: &MeasurementRecord) -> Result<DVector<f64>> {
    if record.len() != map.len() {
        return Err(Error::Domain(format!(
            "record has {} values, sensing map has {} operators",
            record.len(),
            map.len()
        )));
    }
    if record.dim != map.dim() {
        return Err(Error::Domain(format!(
            "record dimension {} does not match map dimension {}",
            record.dim,
            map.dim()
        )));
    }
    let factors = map.unit_factors();
    Ok(DVector::from_iterator(
        map.len(),
        record.values.iter().zip(&factors).map(|(v, c)| v * c),
    ))
}

pub(crate) fn residual_norm(map: &SensingMap, rho: &HermitianMatrix, y: &DVector<f64>) -> f64 {
    (map.apply_unchecked(rho) - y).norm()
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("epsilon must be finite and nonnegative, got {epsilon}")));
    }
    Ok(())
}
