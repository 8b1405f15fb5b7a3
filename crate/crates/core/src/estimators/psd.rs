//! Positivity-constrained estimators.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hermitian::{project_psd, project_psd_fixed_trace, HermitianMatrix};
use crate::measurement::MeasurementRecord;
use crate::sensing::SensingMap;

use super::solver::{minimize, Composite, Solution};
use super::{check_epsilon, data_vector, residual_norm, Diagnostics, EstimatorKind, EstimatorResult, SolverConfig};

/// Lower cutoff for model probabilities inside the log-likelihood.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Tolerance on `s = 1` for the trace-minimization reduction.
const TRACE_PRESERVING_TOL: f64 = 1e-9;

/// `Σf − √m·ε`: trace of the trace-minimization solution in the 2-norm.
pub fn lemma3_trace(sum_f: f64, m: usize, epsilon: f64) -> f64 {
    sum_f - (m as f64).sqrt() * epsilon
}

/// `½‖A[ρ] − y‖²` over the PSD cone, optionally intersected with `Tr ρ = t`.
pub(crate) struct LeastSquares<'a> {
    pub map: &'a SensingMap,
    pub y: &'a DVector<f64>,
    pub trace: Option<f64>,
}

impl LeastSquares<'_> {
    pub(crate) fn solve(&self, x0: HermitianMatrix, config: &SolverConfig) -> Result<Solution<HermitianMatrix>> {
        minimize(self, x0, self.map.operator_norm_sq(), config)
    }
}

impl Composite for LeastSquares<'_> {
    type P = HermitianMatrix;

    fn smooth(&self, x: &HermitianMatrix) -> Result<f64> {
        Ok(0.5 * (self.map.apply_unchecked(x) - self.y).norm_squared())
    }

    fn smooth_grad(&self, x: &HermitianMatrix) -> Result<(f64, HermitianMatrix)> {
        let r = self.map.apply_unchecked(x) - self.y;
        Ok((0.5 * r.norm_squared(), self.map.adjoint_unchecked(&r)))
    }

    fn prox(&self, x: &HermitianMatrix, _step: f64) -> Result<HermitianMatrix> {
        match self.trace {
            Some(t) => project_psd_fixed_trace(x, t),
            None => project_psd(x),
        }
    }

    fn floor(&self) -> f64 {
        1e-30 * (1.0 + self.y.norm_squared())
    }
}

/// Packages a raw solver output, dividing by the trace when `renormalize` is set.
fn finish(
    kind: EstimatorKind,
    map: &SensingMap,
    y: &DVector<f64>,
    sol: Solution<HermitianMatrix>,
    renormalize: bool,
    objective: f64,
) -> Result<EstimatorResult> {
    let raw = sol.x;
    let raw_residual = residual_norm(map, &raw, y);
    let trace = raw.trace();
    let (rho_hat, renormalized) = if renormalize && trace > 0.0 {
        (&raw * (1.0 / trace), true)
    } else {
        (raw.clone(), false)
    };
    Ok(EstimatorResult {
        estimator: kind,
        residual: residual_norm(map, &rho_hat, y),
        rho_hat,
        objective,
        iterations: sol.iterations,
        converged: sol.converged,
        renormalized,
        diagnostics: Diagnostics {
            raw: Some(raw),
            raw_residual: Some(raw_residual),
            objective_history: sol.history,
            ..Diagnostics::default()
        },
    })
}

/// Nonnegative least squares: `min ½‖A[ρ] − y‖²` over `ρ ⪰ 0`, renormalized to unit trace.
pub fn nnls_psd(map: &SensingMap, record: &MeasurementRecord, config: &SolverConfig) -> Result<EstimatorResult> {
    let y = data_vector(map, record)?;
    let problem = LeastSquares { map, y: &y, trace: None };
    let sol = problem.solve(config.initial_state(map.dim(), 1.0)?, config)?;
    let objective = sol.objective;
    finish(EstimatorKind::NnlsPsd, map, &y, sol, true, objective)
}

/// `min ½‖A[ρ] − y‖²` over `ρ ⪰ 0, Tr ρ = t`; the result is divided by `t`.
pub fn constrained_ls_psd(
    map: &SensingMap,
    record: &MeasurementRecord,
    t: f64,
    config: &SolverConfig,
) -> Result<EstimatorResult> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("trace constraint must be positive, got {t}")));
    }
    let y = data_vector(map, record)?;
    let problem = LeastSquares { map, y: &y, trace: Some(t) };
    let sol = problem.solve(config.initial_state(map.dim(), t)?, config)?;
    let objective = sol.objective;
    let mut result = finish(EstimatorKind::ConstrainedLsPsd, map, &y, sol, t != 1.0, objective)?;
    if t == 1.0 {
        result.renormalized = false;
    }
    Ok(result)
}

/// `min Tr ρ` subject to `‖A[ρ] − y‖₂ ≤ ε`, `ρ ⪰ 0`, through the equivalent
/// fixed-trace least-squares problem at `t = Σy − √m·ε`.
///
/// Requires a trace-preserving map (`Σ A_i = 𝟙`); `epsilon` is in record units.
pub fn trace_min_psd(
    map: &SensingMap,
    record: &MeasurementRecord,
    epsilon: f64,
    config: &SolverConfig,
) -> Result<EstimatorResult> {
    check_epsilon(epsilon)?;
    match map.normalization() {
        Some(s) if (s - 1.0).abs() <= TRACE_PRESERVING_TOL => {}
        Some(s) => {
            return Err(Error::Domain(format!(
                "trace minimization needs operators summing to the identity, they sum to {s}·𝟙; rescale the map"
            )))
        }
        None => {
            return Err(Error::Domain(
                "trace minimization needs operators summing to a multiple of the identity".into(),
            ))
        }
    }
    let y = data_vector(map, record)?;
    let t = lemma3_trace(y.sum(), map.len(), map.epsilon_in_map_units(epsilon));
    if !(t > 0.0) {
        return Err(Error::Infeasible(format!(
            "noise bound too large: Σf − √m·ε = {t} is not positive"
        )));
    }
    let mut result = constrained_ls_psd(map, record, t, config)?;
    result.estimator = EstimatorKind::TraceMinPsd;
    result.objective = result.diagnostics.raw.as_ref().map_or(t, |r| r.trace());
    result.renormalized = true;
    result.rho_hat = {
        let raw = result.diagnostics.raw.as_ref().expect("constrained_ls_psd keeps the raw matrix");
        raw * (1.0 / raw.trace())
    };
    result.residual = residual_norm(map, &result.rho_hat, &y);
    result.diagnostics.trace_target = Some(t);
    Ok(result)
}

/// Relative entropy `Σ f·log(f/q) + q − f` of the per-block outcome
/// distributions, floored at [`LIKELIHOOD_FLOOR`]. On unit-trace states it
/// differs from the negative log-likelihood by the constant `−Σ f·log f`.
struct Likelihood<'a> {
    map: &'a SensingMap,
    f: &'a [f64],
    factors: Vec<f64>,
}

impl Likelihood<'_> {
    fn probabilities(&self, x: &HermitianMatrix) -> DVector<f64> {
        let mut q = self.map.apply_unchecked(x);
        for (qi, c) in q.iter_mut().zip(&self.factors) {
            *qi /= c;
        }
        q
    }

    fn divergence(&self, q: &DVector<f64>) -> f64 {
        self.f
            .iter()
            .zip(q.iter())
            .map(|(&f, &q)| {
                if f > 0.0 {
                    let u = (q.max(LIKELIHOOD_FLOOR) - f) / f;
                    f * (u - u.ln_1p())
                } else {
                    q
                }
            })
            .sum()
    }

    fn negative_log_likelihood(&self, x: &HermitianMatrix) -> f64 {
        let q = self.probabilities(x);
        -self
            .f
            .iter()
            .zip(q.iter())
            .filter(|(f, _)| **f > 0.0)
            .map(|(f, q)| f * q.max(LIKELIHOOD_FLOOR).ln())
            .sum::<f64>()
    }
}

impl Composite for Likelihood<'_> {
    type P = HermitianMatrix;

    fn smooth(&self, x: &HermitianMatrix) -> Result<f64> {
        Ok(self.divergence(&self.probabilities(x)))
    }

    fn smooth_grad(&self, x: &HermitianMatrix) -> Result<(f64, HermitianMatrix)> {
        let q = self.probabilities(x);
        let g = DVector::from_iterator(
            q.len(),
            self.f.iter().zip(q.iter()).zip(&self.factors).map(|((&f, &q), c)| {
                let dq = if f == 0.0 {
                    1.0
                } else if q >= LIKELIHOOD_FLOOR {
                    1.0 - f / q
                } else {
                    0.0
                };
                dq / c
            }),
        );
        Ok((self.divergence(&q), self.map.adjoint_unchecked(&g)))
    }

    fn prox(&self, x: &HermitianMatrix, _step: f64) -> Result<HermitianMatrix> {
        project_psd_fixed_trace(x, 1.0)
    }

    fn floor(&self) -> f64 {
        1e-30
    }

    fn has_global_lipschitz(&self) -> bool {
        false
    }
}

/// Maximum likelihood: `min −Σ f·log Tr(E ρ)` over unit-trace `ρ ⪰ 0`.
///
/// Every block of the map must be a POVM (operators summing to a multiple
/// of the identity) and record values must be nonnegative.
pub fn max_likelihood_psd(
    map: &SensingMap,
    record: &MeasurementRecord,
    config: &SolverConfig,
) -> Result<EstimatorResult> {
    data_vector(map, record)?;
    if let Some(v) = record.values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("likelihood needs nonnegative record values, found {v}")));
    }
    if let Some(b) = map.blocks().iter().find(|b| b.normalization.is_none()) {
        return Err(Error::Domain(format!(
            "likelihood needs POVM blocks; block '{}' does not sum to a multiple of the identity",
            b.label
        )));
    }
    let factors = map.unit_factors();
    let c_min = factors.iter().copied().fold(f64::INFINITY, f64::min);
    let d = map.dim() as f64;
    let problem = Likelihood { map, f: &record.values, factors };
    let lipschitz = d * d * map.operator_norm_sq() / (c_min * c_min);
    let sol = minimize(&problem, config.initial_state(map.dim(), 1.0)?, lipschitz, config)?;
    let objective = problem.negative_log_likelihood(&sol.x);
    let y = data_vector(map, record)?;
    let mut result = finish(EstimatorKind::MaxLikelihoodPsd, map, &y, sol, false, objective)?;
    result.diagnostics.raw = None;
    result.diagnostics.raw_residual = None;
    Ok(result)
}
