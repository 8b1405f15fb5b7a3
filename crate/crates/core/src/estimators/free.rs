//! Estimators without the positivity constraint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hermitian::{norms_from_eigenvalues, soft_threshold, HermitianMatrix};
use crate::measurement::MeasurementRecord;
use crate::sensing::SensingMap;

use super::solver::{minimize, Composite};
use super::{check_epsilon, data_vector, residual_norm, Diagnostics, EstimatorKind, EstimatorResult, SolverConfig};

/// Singular values below this fraction of the largest are treated as zero.
const PINV_CUTOFF: f64 = 1e-10;
/// Relative residual at which an equality constraint counts as met.
const FEASIBILITY_TOL: f64 = 1e-9;
const MAX_OUTER: usize = 200;
/// Penalty growth when the constraint violation fails to halve.
const PENALTY_GROWTH: f64 = 2.0;

/// Thin SVD of the design matrix restricted to its numerical row space.
pub(crate) struct RowSpace {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v_t: DMatrix<f64>,
}

impl RowSpace {
    pub(crate) fn of(design: &DMatrix<f64>) -> Result<Self> {
        // SVD of the square triangular factor only: a Householder QR first
        // keeps the decomposition accurate on rank-deficient rectangular input
        let (m, n) = design.shape();
        let (u, sigma, v_t) = if m >= n {
            let qr = design.clone().qr();
            let (u, sigma, v_t) = square_svd(qr.r())?;
            (qr.q() * u, sigma, v_t)
        } else {
            let qr = design.transpose().qr();
            let (u, sigma, w_t) = square_svd(qr.r().transpose())?;
            (u, sigma, (qr.q() * w_t.transpose()).transpose())
        };
        let smax = sigma.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..sigma.len()).filter(|&k| sigma[k] > PINV_CUTOFF * smax).collect();
        Ok(Self {
            u: u.select_columns(&keep),
            sigma: keep.iter().map(|&k| sigma[k]).collect(),
            v_t: v_t.select_rows(&keep),
        })
    }

    /// Minimum-norm least-squares solution of `design·x = y`.
    pub(crate) fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut c = self.u.tr_mul(y);
        for (ci, s) in c.iter_mut().zip(&self.sigma) {
            *ci /= s;
        }
        self.v_t.tr_mul(&c)
    }

    pub(crate) fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.v_t.tr_mul(&(&self.v_t * x))
    }
}

fn exact_result(kind: EstimatorKind, map: &SensingMap, y: &DVector<f64>, m: HermitianMatrix, objective: f64) -> EstimatorResult {
    EstimatorResult {
        estimator: kind,
        residual: residual_norm(map, &m, y),
        rho_hat: m,
        objective,
        iterations: 1,
        converged: true,
        renormalized: false,
        diagnostics: Diagnostics::default(),
    }
}

fn square_svd(a: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = a.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok((u, svd.singular_values.iter().copied().collect(), v_t)),
        _ => Err(Error::Numerical("singular value decomposition failed".into())),
    }
}

/// Minimum-Frobenius-norm Hermitian least-squares solution, through the
/// pseudo-inverse of the design matrix.
pub fn least_squares_free(map: &SensingMap, record: &MeasurementRecord) -> Result<EstimatorResult> {
    let y = data_vector(map, record)?;
    let rows = RowSpace::of(map.design())?;
    let m = HermitianMatrix::from_real_vector(map.dim(), rows.solve(&y).as_slice())?;
    let objective = 0.5 * residual_norm(map, &m, &y).powi(2);
    Ok(exact_result(EstimatorKind::LeastSquaresFree, map, &y, m, objective))
}

/// `min Tr M` subject to `A[M] = y`.
///
/// When `𝟙` lies in the span of the operators the trace is constant on the
/// feasible set; the minimum-norm feasible point is returned and flagged.
/// Otherwise the program is unbounded below.
pub fn trace_min_free(map: &SensingMap, record: &MeasurementRecord) -> Result<EstimatorResult> {
    let y = data_vector(map, record)?;
    let rows = RowSpace::of(map.design())?;
    let x = rows.solve(&y);
    let m = HermitianMatrix::from_real_vector(map.dim(), x.as_slice())?;
    let residual = residual_norm(map, &m, &y);
    if residual > 1e-8 * y.norm().max(1.0) {
        return Err(Error::Infeasible(format!(
            "no Hermitian matrix reproduces the record (least-squares residual {residual:e})"
        )));
    }
    let identity = HermitianMatrix::identity(map.dim()).to_real_vector();
    let gap = (&identity - rows.project(&identity)).norm();
    if gap > 1e-8 * identity.norm() {
        return Err(Error::Unbounded(format!(
            "identity is not in the operator span (distance {gap:e}); the trace is unbounded below on the feasible set"
        )));
    }
    let trace = m.trace();
    let mut result = exact_result(EstimatorKind::TraceMinFree, map, &y, m, trace);
    result.diagnostics.objective_constant_on_feasible_set = true;
    Ok(result)
}

enum Constraint {
    /// `A[M] = y` with multipliers `λ`.
    Equality { lambda: DVector<f64> },
    /// `½(‖A[M] − y‖² − ε²) ≤ 0` with multiplier `λ ≥ 0`.
    Ball { epsilon: f64, lambda: f64 },
}

/// Augmented Lagrangian of `min ‖M‖_*` under a data constraint, with penalty `μ`.
struct NuclearLagrangian<'a> {
    map: &'a SensingMap,
    y: &'a DVector<f64>,
    constraint: Constraint,
    mu: f64,
}

impl NuclearLagrangian<'_> {
    fn residual(&self, x: &HermitianMatrix) -> DVector<f64> {
        self.map.apply_unchecked(x) - self.y
    }

    /// Weight of the ball constraint's gradient, `max(0, λ + μ·g)`.
    fn ball_weight(&self, r: &DVector<f64>, epsilon: f64, lambda: f64) -> f64 {
        (lambda + self.mu * 0.5 * (r.norm_squared() - epsilon * epsilon)).max(0.0)
    }

    fn violation(&self, x: &HermitianMatrix) -> f64 {
        let r = self.residual(x);
        match &self.constraint {
            Constraint::Equality { .. } => r.norm(),
            Constraint::Ball { epsilon, .. } => (r.norm() - epsilon).max(0.0),
        }
    }

    fn update_multipliers(&mut self, x: &HermitianMatrix) {
        let r = self.residual(x);
        let weight = match &self.constraint {
            Constraint::Ball { epsilon, lambda } => Some(self.ball_weight(&r, *epsilon, *lambda)),
            Constraint::Equality { .. } => None,
        };
        match &mut self.constraint {
            Constraint::Equality { lambda } => *lambda += r * self.mu,
            Constraint::Ball { lambda, .. } => *lambda = weight.expect("ball weight"),
        }
    }
}

impl Composite for NuclearLagrangian<'_> {
    type P = HermitianMatrix;

    fn smooth(&self, x: &HermitianMatrix) -> Result<f64> {
        let r = self.residual(x);
        Ok(match &self.constraint {
            Constraint::Equality { lambda } => 0.5 * self.mu * (r + lambda / self.mu).norm_squared(),
            Constraint::Ball { epsilon, lambda } => {
                let w = self.ball_weight(&r, *epsilon, *lambda);
                0.5 * w * w / self.mu
            }
        })
    }

    fn smooth_grad(&self, x: &HermitianMatrix) -> Result<(f64, HermitianMatrix)> {
        let r = self.residual(x);
        Ok(match &self.constraint {
            Constraint::Equality { lambda } => {
                let shifted = r + lambda / self.mu;
                let value = 0.5 * self.mu * shifted.norm_squared();
                (value, self.map.adjoint_unchecked(&(shifted * self.mu)))
            }
            Constraint::Ball { epsilon, lambda } => {
                let w = self.ball_weight(&r, *epsilon, *lambda);
                (0.5 * w * w / self.mu, self.map.adjoint_unchecked(&(r * w)))
            }
        })
    }

    fn prox(&self, x: &HermitianMatrix, step: f64) -> Result<HermitianMatrix> {
        soft_threshold(x, step)
    }

    fn nonsmooth(&self, x: &HermitianMatrix) -> Result<f64> {
        Ok(norms_from_eigenvalues(&x.eigenvalues()?).nuclear)
    }

    fn has_global_lipschitz(&self) -> bool {
        matches!(self.constraint, Constraint::Equality { .. })
    }
}

/// `min ‖M‖_*` subject to `‖A[M] − y‖₂ ≤ ε` over Hermitian `M`.
///
/// Augmented-Lagrangian iteration: each inner problem alternates a gradient
/// step on the penalized residual with eigenvalue soft-thresholding; the
/// penalty grows whenever the constraint violation stops halving. With
/// `ε = 0` the residual is driven below `1e-9·‖y‖`.
pub fn nuclear_min_free(
    map: &SensingMap,
    record: &MeasurementRecord,
    epsilon: f64,
    config: &SolverConfig,
) -> Result<EstimatorResult> {
    check_epsilon(epsilon)?;
    config.validate()?;
    let y = data_vector(map, record)?;
    let eps = map.epsilon_in_map_units(epsilon);
    let norm_sq = map.operator_norm_sq();
    let d = map.dim();
    let mut x = if config.random_init {
        config.initial_state(d, 1.0)?
    } else {
        HermitianMatrix::zeros(d)
    };
    if y.norm() <= eps {
        let zero = HermitianMatrix::zeros(d);
        return Ok(exact_result(EstimatorKind::NuclearMinFree, map, &y, zero, 0.0));
    }
    let constraint = if eps == 0.0 {
        Constraint::Equality { lambda: DVector::zeros(map.len()) }
    } else {
        Constraint::Ball { epsilon: eps, lambda: 0.0 }
    };
    let mu = match constraint {
        Constraint::Equality { .. } => 1.0 / norm_sq,
        Constraint::Ball { .. } => 1.0 / (norm_sq * eps * eps),
    };
    let mut problem = NuclearLagrangian { map, y: &y, constraint, mu };
    let tol = FEASIBILITY_TOL * y.norm();
    let mut violation = problem.violation(&x);
    let mut iterations = 0;
    let mut outer = 0;
    let mut inner_converged = false;
    let mut history = Vec::new();
    let mut objective = f64::INFINITY;

    while outer < MAX_OUTER && iterations < config.max_iterations * 10 {
        outer += 1;
        let lipschitz = problem.mu * norm_sq;
        let sol = minimize(&problem, x, lipschitz, config)?;
        x = sol.x;
        iterations += sol.iterations;
        inner_converged = sol.converged;
        if config.record_history {
            history.extend(sol.history);
        }
        problem.update_multipliers(&x);
        let previous_objective = std::mem::replace(&mut objective, norms_from_eigenvalues(&x.eigenvalues()?).nuclear);
        let next = problem.violation(&x);
        let settled = (previous_objective - objective).abs() <= 1e-10 * objective.max(1.0);
        if next <= tol && (eps == 0.0 || settled) {
            violation = next;
            break;
        }
        if next > 0.5 * violation {
            problem.mu *= PENALTY_GROWTH;
        }
        violation = next;
    }

    let mut result = exact_result(EstimatorKind::NuclearMinFree, map, &y, x, objective);
    result.iterations = iterations;
    result.converged = inner_converged && violation <= tol;
    result.diagnostics.objective_history = history;
    result.diagnostics.outer_iterations = Some(outer);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::haar_random_pure_state;
    use crate::measurement::born_probabilities;
    use crate::sensing::{orthonormal_hermitian_basis, pauli_sensing_map, random_pauli_basis_set};

    fn pauli_setup(m: usize, seed: u64) -> (SensingMap, HermitianMatrix, MeasurementRecord) {
        let map = pauli_sensing_map(3, &random_pauli_basis_set(3, m, seed).unwrap(), true).unwrap();
        let rho = haar_random_pure_state(8, seed + 100).unwrap();
        let record = born_probabilities(&map, &rho).unwrap();
        (map, rho, record)
    }

    /// Normal-equations oracle on the full-rank case.
    #[test]
    fn least_squares_full_ic() {
        let (map, rho, record) = pauli_setup(27, 1);
        let result = least_squares_free(&map, &record).unwrap();
        assert!(result.rho_hat.frobenius_distance(&rho) < 1e-8);
        let a = map.design();
        let y = data_vector(&map, &record).unwrap();
        let normal = (a.transpose() * a).lu().solve(&(a.transpose() * &y)).unwrap();
        let oracle = HermitianMatrix::from_real_vector(8, normal.as_slice()).unwrap();
        assert!(result.rho_hat.frobenius_distance(&oracle) < 1e-8);
    }

    #[test]
    fn least_squares_is_feasible_and_far_when_underdetermined() {
        let (map, rho, record) = pauli_setup(10, 2);
        let result = least_squares_free(&map, &record).unwrap();
        assert!(result.residual < 1e-10);
        assert!(result.rho_hat.frobenius_distance(&rho) > 0.05);
        let rows = RowSpace::of(map.design()).unwrap();
        let recomposed = &rows.u * DMatrix::from_diagonal(&DVector::from_vec(rows.sigma.clone())) * &rows.v_t;
        assert!((recomposed - map.design()).norm() < 1e-12);
        let mixed = born_probabilities(&map, &HermitianMatrix::maximally_mixed(8)).unwrap();
        assert!(least_squares_free(&map, &mixed).unwrap().residual < 1e-10);
    }

    #[test]
    fn trace_min_free_cases() {
        let (map, rho, record) = pauli_setup(10, 3);
        let tm = trace_min_free(&map, &record).unwrap();
        let ls = least_squares_free(&map, &record).unwrap();
        assert!(tm.diagnostics.objective_constant_on_feasible_set);
        assert!(tm.rho_hat.frobenius_distance(&ls.rho_hat) < 1e-12);
        assert!(tm.rho_hat.frobenius_distance(&rho) > 0.05);

        let (map, rho, record) = pauli_setup(27, 3);
        assert!(trace_min_free(&map, &record).unwrap().rho_hat.frobenius_distance(&rho) < 1e-8);

        let traceless: Vec<_> = orthonormal_hermitian_basis(2).into_iter().skip(1).collect();
        let mut ops = Vec::new();
        for a in &traceless {
            let i = HermitianMatrix::identity(2);
            let coef = a.inner(&i) / 2.0;
            ops.push(a - &(&i * coef));
        }
        let map = SensingMap::new(ops).unwrap();
        let record = MeasurementRecord::from_values(2, map.apply(&rho_2()).unwrap().as_slice().to_vec());
        assert!(matches!(trace_min_free(&map, &record), Err(Error::Unbounded(_))));
    }

    fn rho_2() -> HermitianMatrix {
        haar_random_pure_state(2, 9).unwrap()
    }

    #[test]
    fn nuclear_recovers_from_few_bases() {
        let (map, rho, record) = pauli_setup(10, 4);
        let result = nuclear_min_free(&map, &record, 0.0, &SolverConfig::default()).unwrap();
        assert!(result.converged);
        assert!(result.rho_hat.frobenius_distance(&rho) < 1e-5, "{}", result.rho_hat.frobenius_distance(&rho));
        assert!(!result.renormalized);
    }

    #[test]
    fn nuclear_on_a_determined_system() {
        let target = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        let map = SensingMap::new(orthonormal_hermitian_basis(2)).unwrap();
        let record = MeasurementRecord::from_values(2, map.apply(&target).unwrap().as_slice().to_vec());
        let result = nuclear_min_free(&map, &record, 0.0, &SolverConfig::default()).unwrap();
        assert!(result.rho_hat.frobenius_distance(&target) < 1e-8);
    }

    #[test]
    fn nuclear_with_noise_bound_meets_it() {
        let (map, _, record) = pauli_setup(12, 5);
        let eps = 0.01;
        let result = nuclear_min_free(&map, &record, eps, &SolverConfig::default()).unwrap();
        assert!(result.residual <= map.epsilon_in_map_units(eps) * (1.0 + 1e-6));
        let exact = nuclear_min_free(&map, &record, 0.0, &SolverConfig::default()).unwrap();
        assert!(result.objective < exact.objective);
    }
}
