//! Accelerated proximal-gradient skeleton shared by every iterative estimator.
//!
//! FISTA with backtracking on the quadratic majorizer and function-value
//! restart: whenever a momentum step would raise the objective, momentum is
//! dropped and a plain proximal step is taken from the last accepted point,
//! so the accepted objective sequence never increases.

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;

use super::{SolverConfig, StepRule};

/// Consecutive small decreases required before declaring convergence.
const PATIENCE: usize = 5;
const STEP_SHRINK: f64 = 0.5;
/// Per-iteration relaxation of the Lipschitz estimate under backtracking.
const LIPSCHITZ_RELAX: f64 = 0.9;
const LIPSCHITZ_CEILING: f64 = 1e40;

/// Vector-space operations the solver needs on its iterates.
pub(crate) trait Point: Clone {
    /// `self + alpha·other`
    fn axpy(&self, alpha: f64, other: &Self) -> Self;
    fn dot(&self, other: &Self) -> f64;
}

impl Point for HermitianMatrix {
    fn axpy(&self, alpha: f64, other: &Self) -> Self {
        self.add_scaled(alpha, other)
    }

    fn dot(&self, other: &Self) -> f64 {
        self.inner(other)
    }
}

/// A matrix iterate augmented by one free scalar (epigraph variable).
#[derive(Clone, Debug)]
pub(crate) struct Augmented {
    pub rho: HermitianMatrix,
    pub s: f64,
}

impl Point for Augmented {
    fn axpy(&self, alpha: f64, other: &Self) -> Self {
        Augmented {
            rho: self.rho.add_scaled(alpha, &other.rho),
            s: self.s + alpha * other.s,
        }
    }

    fn dot(&self, other: &Self) -> f64 {
        self.rho.inner(&other.rho) + self.s * other.s
    }
}

/// `F(x) = f(x) + g(x)` with `f` smooth and `g` prox-friendly (an indicator or a norm).
pub(crate) trait Composite {
    type P: Point;

    fn smooth(&self, x: &Self::P) -> Result<f64>;

    fn smooth_grad(&self, x: &Self::P) -> Result<(f64, Self::P)>;

    /// `argmin_z g(z) + ‖z − x‖²/(2·step)`
    fn prox(&self, x: &Self::P, step: f64) -> Result<Self::P>;

    fn nonsmooth(&self, _x: &Self::P) -> Result<f64> {
        Ok(0.0)
    }

    /// Objective value at or below which the problem counts as solved exactly.
    fn floor(&self) -> f64 {
        f64::NEG_INFINITY
    }

    /// Whether a global Lipschitz constant is known, making a fixed step safe.
    fn has_global_lipschitz(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Solution<P> {
    pub x: P,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

pub(crate) fn minimize<C: Composite>(
    problem: &C,
    x0: C::P,
    lipschitz: f64,
    config: &SolverConfig,
) -> Result<Solution<C::P>> {
    config.validate()?;
    let fixed = matches!(config.step_rule, StepRule::Fixed) && problem.has_global_lipschitz();
    let mut lip = if lipschitz.is_finite() && lipschitz > 0.0 { lipschitz } else { 1.0 };
    if fixed {
        lip *= 1.05;
    }
    let mut x = problem.prox(&x0, 1.0 / lip)?;
    let mut f_x = problem.smooth(&x)? + problem.nonsmooth(&x)?;
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut history = if config.record_history { vec![f_x] } else { Vec::new() };
    let mut small_steps = 0;
    let mut just_restarted = false;
    let mut converged = f_x <= problem.floor();
    let mut iterations = 0;

    while !converged && iterations < config.max_iterations {
        iterations += 1;
        let (f_y, grad) = problem.smooth_grad(&y)?;
        if !f_y.is_finite() {
            return Err(Error::Numerical(format!("objective became non-finite at iteration {iterations}")));
        }
        let mut trial = if fixed { lip } else { lip * LIPSCHITZ_RELAX };
        let (z, f_z) = loop {
            let z = problem.prox(&y.axpy(-1.0 / trial, &grad), 1.0 / trial)?;
            let f_z = problem.smooth(&z)?;
            if fixed {
                break (z, f_z);
            }
            let step = z.axpy(-1.0, &y);
            let model = f_y + grad.dot(&step) + 0.5 * trial * step.dot(&step);
            if f_z <= model + 1e-14 * f_y.abs() {
                break (z, f_z);
            }
            trial /= STEP_SHRINK;
            if trial > LIPSCHITZ_CEILING {
                return Err(Error::Numerical(format!(
                    "backtracking failed to find a step at iteration {iterations}"
                )));
            }
        };
        lip = trial;
        let candidate = f_z + problem.nonsmooth(&z)?;

        if candidate > f_x {
            if just_restarted {
                // a plain proximal step from the best point no longer decreases: round-off floor
                converged = true;
                break;
            }
            y = x.clone();
            theta = 1.0;
            just_restarted = true;
            continue;
        }
        just_restarted = false;

        let decrease = f_x - candidate;
        let previous = std::mem::replace(&mut x, z);
        f_x = candidate;
        if config.record_history {
            history.push(f_x);
        }

        if config.acceleration {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let momentum = (theta - 1.0) / next;
            y = x.axpy(momentum, &x.axpy(-1.0, &previous));
            theta = next;
        } else {
            y = x.clone();
        }

        if f_x <= problem.floor() {
            converged = true;
        } else if decrease <= config.gradient_tolerance * f_x.abs().max(f64::MIN_POSITIVE) {
            small_steps += 1;
            converged = small_steps >= PATIENCE;
        } else {
            small_steps = 0;
        }
    }

    Ok(Solution {
        x,
        objective: f_x,
        iterations,
        converged,
        history,
    })
}
