//! Direct solvers for the noise-ball trace-minimization program and the
//! fixed-trace residual program in the 2-norm and the max-norm.
//!
//! These do not use the closed-form trace `Σf − √m·ε`, so they can be used
//! to cross-check it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{project_psd, project_psd_fixed_trace, HermitianMatrix};
use crate::measurement::MeasurementRecord;
use crate::sensing::SensingMap;

use super::free::RowSpace;
use super::psd::LeastSquares;
use super::solver::{minimize, Augmented, Composite};
use super::{check_epsilon, data_vector, SolverConfig};

const MAX_OUTER: usize = 150;
const PENALTY_GROWTH: f64 = 4.0;
/// Root-finding stops once the bracket on the trace is this narrow.
const TRACE_TOL: f64 = 1e-12;
const MAX_ROOT_STEPS: usize = 80;
/// Relative-decrease tolerance of the inner augmented-Lagrangian solves.
const INNER_TOL: f64 = 1e-14;
/// Eigenvalues at or below this fraction of the trace are off the support.
const SUPPORT_CUTOFF: f64 = 1e-9;
/// Largest support rank for which the face solve is attempted.
const MAX_FACE_RANK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualNorm {
    Two,
    Max,
}

impl ResidualNorm {
    pub fn of(self, r: &DVector<f64>) -> f64 {
        match self {
            ResidualNorm::Two => r.norm(),
            ResidualNorm::Max => r.amax(),
        }
    }
}

/// Raw (not renormalized) solution of one of the programs in this module.
#[derive(Clone, Debug)]
pub struct ConstrainedOutcome {
    pub rho: HermitianMatrix,
    /// Residual `A[ρ] − y` in the program's norm, map units.
    pub residual: f64,
    pub trace: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ConstrainedOutcome {
    fn new(map: &SensingMap, y: &DVector<f64>, norm: ResidualNorm, rho: HermitianMatrix, iterations: usize, converged: bool) -> Self {
        Self {
            residual: norm.of(&(map.apply_unchecked(&rho) - y)),
            trace: rho.trace(),
            rho,
            iterations,
            converged,
        }
    }
}

/// `min ‖A[ρ] − y‖` over `ρ ⪰ 0, Tr ρ = t`, in the chosen norm.
pub fn constrained_ls_norm(
    map: &SensingMap,
    record: &MeasurementRecord,
    t: f64,
    norm: ResidualNorm,
    config: &SolverConfig,
) -> Result<ConstrainedOutcome> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("trace constraint must be positive, got {t}")));
    }
    let y = data_vector(map, record)?;
    fixed_trace_residual(map, &y, t, norm, HermitianMatrix::maximally_mixed(map.dim()) * t, config)
}

/// Max-norm version of the fixed-trace residual program.
pub fn constrained_ls_max_norm(
    map: &SensingMap,
    record: &MeasurementRecord,
    t: f64,
    config: &SolverConfig,
) -> Result<ConstrainedOutcome> {
    constrained_ls_norm(map, record, t, ResidualNorm::Max, config)
}

fn fixed_trace_residual(
    map: &SensingMap,
    y: &DVector<f64>,
    t: f64,
    norm: ResidualNorm,
    x0: HermitianMatrix,
    config: &SolverConfig,
) -> Result<ConstrainedOutcome> {
    match norm {
        ResidualNorm::Two => {
            let sol = LeastSquares { map, y, trace: Some(t) }.solve(x0, config)?;
            let iterate = ConstrainedOutcome::new(map, y, norm, sol.x, sol.iterations, sol.converged);
            match polish_on_face(map, y, t, &iterate.rho)? {
                Some(rho) => {
                    let polished = ConstrainedOutcome::new(map, y, norm, rho, sol.iterations, sol.converged);
                    Ok(if polished.residual <= iterate.residual { polished } else { iterate })
                }
                None => Ok(iterate),
            }
        }
        ResidualNorm::Max => {
            let (rho, iterations, converged) = box_lagrangian(map, y, Mode::Epigraph { trace: t }, x0, config)?;
            Ok(ConstrainedOutcome::new(map, y, norm, rho, iterations, converged))
        }
    }
}

/// Exact minimizer of `‖A[ρ] − y‖₂` subject to `Tr ρ = t` on the face
/// `ρ = V·X·V†` spanned by the support of `rho`, or `None` when that point
/// leaves the PSD cone.
///
/// First-order iterates creep along poorly conditioned directions of the map
/// long after the objective has settled; once the support is right this
/// removes the remaining error in one linear solve.
fn polish_on_face(map: &SensingMap, y: &DVector<f64>, t: f64, rho: &HermitianMatrix) -> Result<Option<HermitianMatrix>> {
    let dec = rho.eigen()?;
    let k = dec.eigenvalues.iter().take_while(|&&l| l > SUPPORT_CUTOFF * t).count();
    if k == 0 || k > MAX_FACE_RANK {
        return Ok(None);
    }
    let v = dec.eigenvectors.columns(0, k).into_owned();
    let lift = |z: &[f64]| -> Result<HermitianMatrix> {
        let x = HermitianMatrix::from_real_vector(k, z)?;
        HermitianMatrix::new(&v * x.as_matrix() * v.adjoint())
    };
    let n = k * k;
    let mut columns = DMatrix::zeros(map.len(), n);
    let mut c = DVector::zeros(n);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        c[i] = HermitianMatrix::from_real_vector(k, &e)?.trace();
        columns.set_column(i, &map.apply_unchecked(&lift(&e)?));
    }
    // z = z_t + N·w, with the columns of N an orthonormal basis of c⊥ taken
    // from the Householder reflection that maps c onto the first axis
    let c_norm = c.norm();
    let mut z = &c * (t / (c_norm * c_norm));
    if n > 1 {
        let mut u = c.clone();
        u[0] += c_norm.copysign(c[0]);
        let reflection = DMatrix::identity(n, n) - (&u * u.transpose()) * (2.0 / u.norm_squared());
        let basis = reflection.columns(1, n - 1).into_owned();
        let w = RowSpace::of(&(&columns * &basis))?.solve(&(y - &columns * &z));
        z += basis * w;
    }
    if HermitianMatrix::from_real_vector(k, z.as_slice())?.min_eigenvalue()? < 0.0 {
        return Ok(None);
    }
    lift(z.as_slice()).map(Some)
}

/// `min Tr ρ` subject to `‖A[ρ] − y‖ ≤ ε`, `ρ ⪰ 0`.
///
/// In the 2-norm the smallest feasible trace is located by safeguarded
/// secant search on the convex, decreasing residual curve of the fixed-trace
/// program. In the max-norm the program is solved directly by an augmented
/// Lagrangian on the `2m` linear constraints `±r_j ≤ ε`. `epsilon` is in
/// record units.
pub fn trace_min_psd_direct(
    map: &SensingMap,
    record: &MeasurementRecord,
    epsilon: f64,
    norm: ResidualNorm,
    config: &SolverConfig,
) -> Result<ConstrainedOutcome> {
    check_epsilon(epsilon)?;
    let y = data_vector(map, record)?;
    let eps = map.epsilon_in_map_units(epsilon);
    let d = map.dim();
    if norm.of(&y) <= eps {
        return Ok(ConstrainedOutcome::new(map, &y, norm, HermitianMatrix::zeros(d), 0, true));
    }
    match norm {
        ResidualNorm::Two => smallest_feasible_trace(map, &y, eps, norm, config),
        ResidualNorm::Max => {
            let (rho, iterations, converged) =
                box_lagrangian(map, &y, Mode::TraceMin { bound: eps }, HermitianMatrix::maximally_mixed(d), config)?;
            Ok(ConstrainedOutcome::new(map, &y, norm, rho, iterations, converged))
        }
    }
}

/// Smallest `t` with `min_{Tr ρ = t} ‖A[ρ] − y‖ ≤ ε`, with the minimizer at that `t`.
pub fn smallest_feasible_trace_for(
    map: &SensingMap,
    record: &MeasurementRecord,
    epsilon: f64,
    norm: ResidualNorm,
    config: &SolverConfig,
) -> Result<ConstrainedOutcome> {
    check_epsilon(epsilon)?;
    let y = data_vector(map, record)?;
    smallest_feasible_trace(map, &y, map.epsilon_in_map_units(epsilon), norm, config)
}

fn smallest_feasible_trace(
    map: &SensingMap,
    y: &DVector<f64>,
    eps: f64,
    norm: ResidualNorm,
    config: &SolverConfig,
) -> Result<ConstrainedOutcome> {
    let d = map.dim();
    let unconstrained = LeastSquares { map, y, trace: None }.solve(HermitianMatrix::maximally_mixed(d), config)?;
    let mut hi = ConstrainedOutcome::new(map, y, norm, unconstrained.x, unconstrained.iterations, unconstrained.converged);
    if norm == ResidualNorm::Max {
        hi = fixed_trace_residual(map, y, hi.trace, norm, hi.rho.clone(), config)?;
    }
    if hi.residual > eps {
        return Err(Error::Infeasible(format!(
            "no PSD matrix has residual below {eps:e}; the smallest is {:e}",
            hi.residual
        )));
    }
    let mut iterations = hi.iterations;
    // residual at trace 0 is ‖y‖
    let (mut t_lo, mut g_lo) = (0.0, norm.of(y) - eps);
    let (mut t_hi, mut g_hi) = (hi.trace, hi.residual - eps);
    let mut best = hi;
    let mut side = 0i8;
    for _ in 0..MAX_ROOT_STEPS {
        if t_hi - t_lo <= TRACE_TOL * t_hi.max(1.0) {
            break;
        }
        // Illinois-modified regula falsi, kept inside the bracket
        let mut t = t_hi - g_hi * (t_hi - t_lo) / (g_hi - g_lo);
        if !(t > t_lo && t < t_hi) {
            t = 0.5 * (t_lo + t_hi);
        }
        let x0 = &best.rho * (t / best.trace);
        let trial = fixed_trace_residual(map, y, t, norm, x0, config)?;
        iterations += trial.iterations;
        let g = trial.residual - eps;
        if g.abs() <= 1e-14 * eps.max(f64::MIN_POSITIVE) {
            best = trial;
            break;
        }
        if g > 0.0 {
            t_lo = t;
            g_lo = g;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            t_hi = t;
            g_hi = g;
            best = trial;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    best.iterations = iterations;
    Ok(best)
}

#[derive(Clone, Copy)]
enum Mode {
    /// `min Tr ρ` with `|r_j| ≤ bound`, `ρ ⪰ 0`.
    TraceMin { bound: f64 },
    /// `min s` with `|r_j| ≤ s`, `ρ ⪰ 0`, `Tr ρ = trace`.
    Epigraph { trace: f64 },
}

/// Augmented Lagrangian for the `2m` constraints `±r_j − b ≤ 0`.
struct BoxLagrangian<'a> {
    map: &'a SensingMap,
    y: &'a DVector<f64>,
    mode: Mode,
    upper: DVector<f64>,
    lower: DVector<f64>,
    mu: f64,
    identity: HermitianMatrix,
}

impl BoxLagrangian<'_> {
    fn bound(&self, x: &Augmented) -> f64 {
        match self.mode {
            Mode::TraceMin { bound } => bound,
            Mode::Epigraph { .. } => x.s,
        }
    }

    /// Constraint weights `max(0, λ± + μ·(±r − b))`.
    fn weights(&self, x: &Augmented) -> (DVector<f64>, DVector<f64>) {
        let r = self.map.apply_unchecked(&x.rho) - self.y;
        let b = self.bound(x);
        let up = DVector::from_fn(r.len(), |j, _| (self.upper[j] + self.mu * (r[j] - b)).max(0.0));
        let lo = DVector::from_fn(r.len(), |j, _| (self.lower[j] + self.mu * (-r[j] - b)).max(0.0));
        (up, lo)
    }

    fn objective(&self, x: &Augmented) -> f64 {
        match self.mode {
            Mode::TraceMin { .. } => x.rho.trace(),
            Mode::Epigraph { .. } => x.s,
        }
    }

    fn violation(&self, x: &Augmented) -> f64 {
        let r = self.map.apply_unchecked(&x.rho) - self.y;
        (r.amax() - self.bound(x)).max(0.0)
    }
}

impl Composite for BoxLagrangian<'_> {
    type P = Augmented;

    fn smooth(&self, x: &Augmented) -> Result<f64> {
        let (up, lo) = self.weights(x);
        Ok(self.objective(x) + 0.5 * (up.norm_squared() + lo.norm_squared()) / self.mu)
    }

    fn smooth_grad(&self, x: &Augmented) -> Result<(f64, Augmented)> {
        let (up, lo) = self.weights(x);
        let value = self.objective(x) + 0.5 * (up.norm_squared() + lo.norm_squared()) / self.mu;
        let mut rho = self.map.adjoint_unchecked(&(&up - &lo));
        let s = match self.mode {
            Mode::TraceMin { .. } => {
                rho = &rho + &self.identity;
                0.0
            }
            Mode::Epigraph { .. } => 1.0 - up.sum() - lo.sum(),
        };
        Ok((value, Augmented { rho, s }))
    }

    fn prox(&self, x: &Augmented, _step: f64) -> Result<Augmented> {
        Ok(match self.mode {
            Mode::TraceMin { .. } => Augmented { rho: project_psd(&x.rho)?, s: 0.0 },
            Mode::Epigraph { trace } => Augmented {
                rho: project_psd_fixed_trace(&x.rho, trace)?,
                s: x.s,
            },
        })
    }

    fn has_global_lipschitz(&self) -> bool {
        false
    }
}

fn box_lagrangian(
    map: &SensingMap,
    y: &DVector<f64>,
    mode: Mode,
    rho0: HermitianMatrix,
    config: &SolverConfig,
) -> Result<(HermitianMatrix, usize, bool)> {
    config.validate()?;
    let m = map.len();
    let norm_sq = map.operator_norm_sq();
    let s0 = (map.apply_unchecked(&rho0) - y).amax();
    let mut x = Augmented { rho: rho0, s: s0 };
    let mut problem = BoxLagrangian {
        map,
        y,
        mode,
        upper: DVector::zeros(m),
        lower: DVector::zeros(m),
        mu: 1.0 / norm_sq,
        identity: HermitianMatrix::identity(map.dim()),
    };
    let scale = y.amax().max(f64::MIN_POSITIVE);
    let mut violation = problem.violation(&x);
    let mut objective = problem.objective(&x);
    let mut iterations = 0;
    let mut converged = false;
    let inner = SolverConfig { gradient_tolerance: config.gradient_tolerance.min(INNER_TOL), ..config.clone() };
    for _ in 0..MAX_OUTER {
        let lipschitz = problem.mu * (norm_sq + 2.0 * m as f64);
        let sol = minimize(&problem, x, lipschitz, &inner)?;
        x = sol.x;
        iterations += sol.iterations;
        let (up, lo) = problem.weights(&x);
        problem.upper = up;
        problem.lower = lo;
        let next = problem.violation(&x);
        let previous = std::mem::replace(&mut objective, problem.objective(&x));
        if next <= 1e-11 * scale && (previous - objective).abs() <= 1e-11 * objective.abs().max(scale) {
            converged = sol.converged;
            break;
        }
        if next > 0.25 * violation {
            problem.mu *= PENALTY_GROWTH;
        }
        violation = next;
    }
    Ok((x.rho, iterations, converged))
}
