//! Error-bound constants, the low-rank error bound, and the checker for the
//! equivalence between noise-ball trace minimization and fixed-trace least squares.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::free::RowSpace;
use crate::estimators::{
    constrained_ls_norm, data_vector, lemma3_trace, smallest_feasible_trace_for, trace_min_psd,
    trace_min_psd_direct, ResidualNorm, SolverConfig,
};
use crate::hermitian::{norms, random_density_matrix, rank_split, HermitianMatrix};
use crate::measurement::{born_probabilities, sample_frequencies, MeasurementRecord};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sensing::{random_basis_povms, sensing_map_from_povms, SensingMap};

/// Largest admissible restricted isometry constant, `√2 − 1`.
pub const DELTA_LIMIT: f64 = std::f64::consts::SQRT_2 - 1.0;
/// Discrepancy below which each equivalence check passes.
pub const EQUIVALENCE_TOL: f64 = 1e-4;
/// Relative-decrease tolerance used for the solves inside the checker.
const CHECK_SOLVER_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub delta_4r: f64,
    pub c0: f64,
    pub c1: f64,
}

/// `c0 = 4√(1+δ)/(1−(1+√2)δ)` and `c1 = (1−(1−√2)δ)/(1−(1+√2)δ)` for `0 ≤ δ < √2 − 1`.
pub fn bound_constants(delta_4r: f64) -> Result<BoundConstants> {
    if !(delta_4r >= 0.0) || !delta_4r.is_finite() {
        return Err(Error::Domain(format!("δ_4r must be a finite nonnegative number, got {delta_4r}")));
    }
    if delta_4r >= DELTA_LIMIT {
        return Err(Error::Domain(format!("the bound requires δ_4r < √2−1, got {delta_4r}")));
    }
    let s2 = std::f64::consts::SQRT_2;
    let denominator = 1.0 - (1.0 + s2) * delta_4r;
    Ok(BoundConstants {
        delta_4r,
        c0: 4.0 * (1.0 + delta_4r).sqrt() / denominator,
        c1: (1.0 - (1.0 - s2) * delta_4r) / denominator,
    })
}

/// `2·c0·ε + c1·√(2/r)·‖tail‖_*`, with the tail taken from the rank-`r` split of `rho_hat`.
pub fn lemma2_bound(rho_hat: &HermitianMatrix, epsilon: f64, r: usize, delta_4r: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let constants = bound_constants(delta_4r)?;
    let split = rank_split(rho_hat, r)?;
    let tail = norms(&split.tail)?.nuclear;
    Ok(2.0 * constants.c0 * epsilon + constants.c1 * (2.0 / r as f64).sqrt() * tail)
}

/// Outcome of [`lemma3_check`]. All residuals and bounds are in map units.
#[derive(Clone, Debug, Serialize)]
pub struct Lemma3Report {
    pub norm: ResidualNorm,
    pub m: usize,
    pub sum_f: f64,
    pub epsilon: f64,
    /// Closed-form trace in the 2-norm; found by root search on the
    /// fixed-trace residual curve for the max-norm.
    pub t: f64,
    pub direct_trace: f64,
    pub direct_residual: f64,
    pub fixed_trace_residual: f64,
    /// Raw trace of [`trace_min_psd`] (2-norm only), which uses `t` by construction.
    pub reduction_trace: Option<f64>,
    /// Frobenius distance between the two raw solutions.
    pub solution_gap: f64,
    /// `|fixed-trace residual − ε|`
    pub residual_gap: f64,
    /// `|direct trace − t|`
    pub trace_gap: f64,
    /// Distance from the data vector to the operator range.
    pub range_gap: f64,
    /// Least eigenvalue of the least-squares point for `y − (ε/√m)·𝟙` (2-norm
    /// only). The closed-form trace is exact when this is nonnegative and
    /// `range_gap` vanishes.
    pub shifted_min_eigenvalue: Option<f64>,
    pub converged: bool,
    /// Set when `t ≤ 0`; the gaps are then NaN.
    pub infeasible: Option<String>,
    pub pass: bool,
}

impl Lemma3Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k}={v}").expect("writing to a String");
        line("norm", format!("{:?}", self.norm).to_lowercase());
        line("m", self.m.to_string());
        line("sum_f", self.sum_f.to_string());
        line("epsilon", self.epsilon.to_string());
        line("t", self.t.to_string());
        line("direct_trace", self.direct_trace.to_string());
        line("direct_residual", self.direct_residual.to_string());
        line("fixed_trace_residual", self.fixed_trace_residual.to_string());
        if let Some(r) = self.reduction_trace {
            line("reduction_trace", r.to_string());
        }
        line("solution_gap", format!("{:e}", self.solution_gap));
        line("residual_gap", format!("{:e}", self.residual_gap));
        line("trace_gap", format!("{:e}", self.trace_gap));
        line("range_gap", format!("{:e}", self.range_gap));
        if let Some(l) = self.shifted_min_eigenvalue {
            line("shifted_min_eigenvalue", l.to_string());
        }
        line("converged", self.converged.to_string());
        if let Some(msg) = &self.infeasible {
            line("infeasible", msg.clone());
        }
        line("result", if self.pass { "PASS" } else { "FAIL" }.to_string());
        out
    }
}

/// Compares the noise-ball trace minimizer, solved directly, with the
/// fixed-trace residual minimizer at the predicted trace `t`.
///
/// Requires a trace-preserving map and `epsilon > 0` (record units). PASS
/// when the solution distance, `|residual − ε|` and `|trace − t|` are all
/// below [`EQUIVALENCE_TOL`].
pub fn lemma3_check(
    map: &SensingMap,
    record: &MeasurementRecord,
    epsilon: f64,
    norm: ResidualNorm,
    config: &SolverConfig,
) -> Result<Lemma3Report> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("the equivalence check needs epsilon > 0, got {epsilon}")));
    }
    match map.normalization() {
        Some(s) if (s - 1.0).abs() <= 1e-9 => {}
        _ => return Err(Error::Domain("the equivalence check needs operators summing to the identity".into())),
    }
    let config = SolverConfig {
        gradient_tolerance: config.gradient_tolerance.min(CHECK_SOLVER_TOL),
        ..config.clone()
    };
    let y = data_vector(map, record)?;
    let eps = map.epsilon_in_map_units(epsilon);
    let m = map.len();
    let sum_f = y.sum();
    let rows = RowSpace::of(map.design())?;
    let mut report = Lemma3Report {
        norm,
        m,
        sum_f,
        epsilon: eps,
        t: f64::NAN,
        direct_trace: f64::NAN,
        direct_residual: f64::NAN,
        fixed_trace_residual: f64::NAN,
        reduction_trace: None,
        solution_gap: f64::NAN,
        residual_gap: f64::NAN,
        trace_gap: f64::NAN,
        range_gap: (map.design() * rows.solve(&y) - &y).norm(),
        shifted_min_eigenvalue: None,
        converged: false,
        infeasible: None,
        pass: false,
    };

    let t = match norm {
        ResidualNorm::Two => {
            let shifted = y.add_scalar(-eps / (m as f64).sqrt());
            let point = HermitianMatrix::from_real_vector(map.dim(), rows.solve(&shifted).as_slice())?;
            report.shifted_min_eigenvalue = Some(point.min_eigenvalue()?);
            lemma3_trace(sum_f, m, eps)
        }
        ResidualNorm::Max => match smallest_feasible_trace_for(map, record, epsilon, norm, &config) {
            Ok(found) => found.trace,
            Err(Error::Infeasible(msg)) => {
                report.infeasible = Some(msg);
                return Ok(report);
            }
            Err(e) => return Err(e),
        },
    };
    report.t = t;
    if !(t > 0.0) {
        report.infeasible = Some(format!("predicted trace {t} is not positive"));
        return Ok(report);
    }

    let direct = trace_min_psd_direct(map, record, epsilon, norm, &config)?;
    let fixed = constrained_ls_norm(map, record, t, norm, &config)?;
    if norm == ResidualNorm::Two {
        let reduction = trace_min_psd(map, record, epsilon, &config)?;
        report.reduction_trace = reduction.diagnostics.raw.map(|r| r.trace());
    }
    report.direct_trace = direct.trace;
    report.direct_residual = direct.residual;
    report.fixed_trace_residual = fixed.residual;
    report.solution_gap = direct.rho.frobenius_distance(&fixed.rho);
    report.residual_gap = (fixed.residual - eps).abs();
    report.trace_gap = (direct.trace - t).abs();
    report.converged = direct.converged && fixed.converged;
    report.pass = report.solution_gap < EQUIVALENCE_TOL
        && report.residual_gap < EQUIVALENCE_TOL
        && report.trace_gap < EQUIVALENCE_TOL;
    Ok(report)
}

/// Noisy instance on which the closed-form trace is exact: `d + 1` Haar
/// random bases (so every record lies in the operator range), rescaled, and
/// a full-rank state `w·|ψ⟩⟨ψ| + (1 − w)·𝟙/d`, sampled `n_rep` times per basis.
pub fn equivalence_instance(d: usize, pure_weight: f64, n_rep: u64, seed: u64) -> Result<(SensingMap, MeasurementRecord)> {
    if !(0.0..1.0).contains(&pure_weight) {
        return Err(Error::Domain(format!("pure weight must lie in [0, 1), got {pure_weight}")));
    }
    let povms = random_basis_povms(d, d + 1, derive_seed(seed, &[1]))?;
    let map = sensing_map_from_povms(&povms, true)?;
    let mut rng = rng_from_seed(derive_seed(seed, &[2]));
    let pure = random_density_matrix(d, 1, &mut rng)?;
    let rho = &(&pure * pure_weight) + &(HermitianMatrix::maximally_mixed(d) * (1.0 - pure_weight));
    let ideal = born_probabilities(&map, &rho)?;
    let record = sample_frequencies(&ideal, n_rep, derive_seed(seed, &[3]))?;
    Ok((map, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{haar_random_pure_state, random_density_matrix};
    use crate::rng::rng_from_seed;
    use crate::sensing::{all_pauli_bases, pauli_sensing_map};

    #[test]
    fn constants_at_zero_and_limit() {
        let c = bound_constants(0.0).unwrap();
        assert_eq!(c.c0, 4.0);
        assert_eq!(c.c1, 1.0);
        assert!(matches!(bound_constants(0.42), Err(Error::Domain(_))));
        let err = bound_constants(DELTA_LIMIT).unwrap_err().to_string();
        assert!(err.contains("δ_4r < √2−1"));
        assert!(bound_constants(-0.1).is_err());
    }

    /// Second evaluation path: `1 − (1+√2)δ` rewritten as `(√2−1−δ)(1+√2)`.
    #[test]
    fn constants_match_a_second_evaluation() {
        let delta: f64 = 0.2;
        let c = bound_constants(delta).unwrap();
        let gap = (2f64.sqrt() - 1.0 - delta) * (1.0 + 2f64.sqrt());
        let c0 = 4.0 * (1.0 + delta).powf(0.5) / gap;
        let c1 = (1.0 + (2f64.sqrt() - 1.0) * delta) / gap;
        assert!((c.c0 - c0).abs() < 1e-12 * c0);
        assert!((c.c1 - c1).abs() < 1e-12 * c1);
    }

    #[test]
    fn constants_increase_toward_the_limit() {
        let grid: Vec<f64> = (0..100).map(|k| DELTA_LIMIT * k as f64 / 100.0).collect();
        let values: Vec<_> = grid.iter().map(|&d| bound_constants(d).unwrap()).collect();
        for w in values.windows(2) {
            assert!(w[0].c0 < w[1].c0);
            assert!(w[0].c1 < w[1].c1);
        }
        assert!(values.iter().all(|c| c.c0 >= 4.0 && c.c1 >= 1.0));
    }

    #[test]
    fn bound_for_low_rank_estimates() {
        let pure = haar_random_pure_state(4, 2).unwrap();
        let c = bound_constants(0.1).unwrap();
        assert!((lemma2_bound(&pure, 0.05, 1, 0.1).unwrap() - 2.0 * c.c0 * 0.05).abs() < 1e-12);
        assert!((lemma2_bound(&pure, 0.05, 3, 0.1).unwrap() - 2.0 * c.c0 * 0.05).abs() < 1e-12);
        assert!(lemma2_bound(&pure, 0.0, 1, 0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn bound_composes_from_its_parts() {
        let mut rng = rng_from_seed(5);
        let rho = random_density_matrix(4, 4, &mut rng).unwrap();
        let c = bound_constants(0.1).unwrap();
        let mut eig = rho.eigenvalues().unwrap();
        eig.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        let tail: f64 = eig[2..].iter().map(|v| v.abs()).sum();
        let expected = 2.0 * c.c0 * 0.05 + c.c1 * 1.0 * tail;
        assert!((lemma2_bound(&rho, 0.05, 2, 0.1).unwrap() - expected).abs() < 1e-12);
        let by_rank: Vec<f64> = (1..=4).map(|r| lemma2_bound(&rho, 0.05, r, 0.1).unwrap()).collect();
        assert!(by_rank.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn equivalence_holds_on_two_qubits() {
        let (map, record) = equivalence_instance(4, 0.4, 500, 11).unwrap();
        let report = lemma3_check(&map, &record, record.epsilon, ResidualNorm::Two, &SolverConfig::default()).unwrap();
        assert!(report.pass, "{}", report.to_text());
        assert!((report.reduction_trace.unwrap() - report.t).abs() < 1e-10);
    }

    #[test]
    fn equivalence_in_the_max_norm() {
        let (map, record) = equivalence_instance(4, 0.4, 2000, 3).unwrap();
        let report = lemma3_check(&map, &record, record.epsilon, ResidualNorm::Max, &SolverConfig::default()).unwrap();
        assert!(report.pass, "{}", report.to_text());
    }

    #[test]
    fn oversized_bound_is_reported_infeasible() {
        let (map, record) = equivalence_instance(4, 0.4, 500, 1).unwrap();
        let report = lemma3_check(&map, &record, 10.0, ResidualNorm::Two, &SolverConfig::default()).unwrap();
        assert!(report.infeasible.is_some());
        assert!(!report.pass);
        assert!(report.to_text().contains("result=FAIL"));
    }

    /// Pauli records leave the operator range, so the predicted trace is not attained.
    #[test]
    fn pauli_records_break_the_closed_form() {
        let map = pauli_sensing_map(2, &all_pauli_bases(2), true).unwrap();
        let rho = haar_random_pure_state(4, 6).unwrap();
        let record = sample_frequencies(&born_probabilities(&map, &rho).unwrap(), 500, 6).unwrap();
        let report = lemma3_check(&map, &record, record.epsilon, ResidualNorm::Two, &SolverConfig::default()).unwrap();
        assert!(!report.pass);
        assert!(report.trace_gap > EQUIVALENCE_TOL);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (map, record) = equivalence_instance(4, 0.4, 500, 1).unwrap();
        let config = SolverConfig::default();
        assert!(lemma3_check(&map, &record, 0.0, ResidualNorm::Two, &config).is_err());
        let unscaled = pauli_sensing_map(1, &all_pauli_bases(1), false).unwrap();
        let rec = born_probabilities(&unscaled, &HermitianMatrix::maximally_mixed(2)).unwrap();
        assert!(lemma3_check(&unscaled, &rec, 0.01, ResidualNorm::Two, &config).is_err());
        assert!(equivalence_instance(4, 1.0, 10, 1).is_err());
    }
}
