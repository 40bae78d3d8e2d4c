//! Projected gradient descent for `min J(λ)` over multipliers `λ` in
//! `Range Γ` with `G*λG > 0`. An independent route to the optimal spectrum,
//! used to cross-check the fixed-point iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;
use crate::pf::{cost_j_hermitian, DENOMINATOR_GUARD};
use crate::problem::{gamma_apply, NormalizedProblem, RangeGammaSplit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    /// Stop once the projected gradient has Frobenius norm at most `tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    /// The line search gives up below this step.
    pub min_step: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            armijo: 1e-4,
            min_step: 1e-14,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualIterate {
    pub lambda: HermitianMatrix,
    pub j_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// `J` at every accepted iterate, starting point included.
    pub j_history: Vec<f64>,
    /// Projected gradient norm at the same iterates.
    pub grad_history: Vec<f64>,
}

fn checked_forms(prob: &NormalizedProblem, lambda: &HermitianMatrix) -> Result<Vec<f64>> {
    let forms = prob.response().quadratic_forms(lambda);
    let (floor, top) = forms
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let guard = DENOMINATOR_GUARD * top;
    if !(floor > guard) {
        return Err(Error::BoundaryProximity { floor, guard });
    }
    Ok(forms)
}

fn gradient_from_forms(
    prob: &NormalizedProblem,
    split: &RangeGammaSplit,
    forms: &[f64],
) -> Result<HermitianMatrix> {
    let phi: Vec<f64> = prob.psi().iter().zip(forms).map(|(p, q)| p / q).collect();
    let full = &HermitianMatrix::identity(prob.dim()) - &gamma_apply(prob.response(), &phi)?;
    Ok(split.range_component(&full))
}

/// Projection onto `Range Γ` of `I - Γ(Ψ / G*λG)`.
pub fn dual_gradient(
    prob: &NormalizedProblem,
    split: &RangeGammaSplit,
    lambda: &HermitianMatrix,
) -> Result<HermitianMatrix> {
    let forms = checked_forms(prob, lambda)?;
    gradient_from_forms(prob, split, &forms)
}

/// Starting point: the projection of `I` onto `Range Γ`, rescaled if its
/// quadratic form is not bounded away from zero.
fn initial_point(prob: &NormalizedProblem, split: &RangeGammaSplit) -> Result<HermitianMatrix> {
    let start = split.range_component(&HermitianMatrix::identity(prob.dim()));
    let forms = prob.response().quadratic_forms(&start);
    let floor = forms.iter().copied().fold(f64::INFINITY, f64::min);
    if !(floor > 0.0) {
        return Err(Error::BoundaryProximity { floor, guard: 0.0 });
    }
    Ok(if floor < 1.0 { start.scale(1.0 / floor) } else { start })
}

pub fn dual_solve(
    prob: &NormalizedProblem,
    split: &RangeGammaSplit,
    config: &DualConfig,
) -> Result<DualIterate> {
    let w = prob.grid().weight();
    let mut lambda = initial_point(prob, split)?;
    let mut forms = checked_forms(prob, &lambda)?;
    let mut j_value = cost_j_hermitian(prob, &lambda)?;
    let mut j_history = vec![j_value];
    let mut grad_history = Vec::new();
    let mut step: f64 = 1.0;
    for iteration in 0..=config.max_iter {
        let grad = gradient_from_forms(prob, split, &forms)?;
        let grad_norm = grad.frobenius_norm();
        grad_history.push(grad_norm);
        if grad_norm <= config.tol {
            return Ok(DualIterate {
                lambda,
                j_value,
                grad_norm,
                iterations: iteration,
                j_history,
                grad_history,
            });
        }
        if iteration == config.max_iter {
            break;
        }
        let grad_forms = prob.response().quadratic_forms(&grad);
        // Grow the step again after each accepted one; halve on rejection.
        step = (step * 2.0).min(1e6);
        loop {
            if step < config.min_step {
                return Err(Error::LineSearchStalled { iteration, step });
            }
            let trial_forms: Vec<f64> = forms.iter().zip(&grad_forms).map(|(q, d)| q - step * d).collect();
            let inside = checked_floor(&trial_forms);
            if inside {
                // J(trial) - J(λ) without cancellation between two O(1) costs.
                let log_ratio: f64 = prob
                    .psi()
                    .iter()
                    .zip(forms.iter().zip(&grad_forms))
                    .map(|(p, (q, d))| p * (-step * d / q).ln_1p())
                    .sum();
                let change = -step * grad.trace() - log_ratio * w;
                if change <= -config.armijo * step * grad_norm * grad_norm {
                    let next = split.range_component(&(&lambda - &grad.scale(step)));
                    forms = checked_forms(prob, &next)?;
                    lambda = next;
                    j_value += change;
                    j_history.push(j_value);
                    break;
                }
            }
            step *= 0.5;
        }
    }
    Err(Error::MaxIterations(config.max_iter))
}

fn checked_floor(forms: &[f64]) -> bool {
    let (floor, top) = forms
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    floor > DENOMINATOR_GUARD * top
}
