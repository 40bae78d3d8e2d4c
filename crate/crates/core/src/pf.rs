//! The fixed-point map
//! `Θ(Λ) = Λ^{1/2} ∫ G (Ψ / G*ΛG) G* Λ^{1/2}`, the dual cost
//! `J(Λ) = tr Λ - ∫ Ψ log G*ΛG`, the iteration built on them, and the
//! analysis of fixed points on the boundary of the state space.
//!
//! Every function takes a normalized problem (`∫Ψ = 1`, `Σ = I`), so `Θ`
//! maps unit-trace states to unit-trace states.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::weighted_outer_sum;
use crate::linalg::{principal_sqrt, HermitianMatrix, StateMatrix, RANK_TOL};
use crate::problem::{gamma_apply, NormalizedProblem};

/// Relative floor on `min_θ G*ΛG` (against the maximum over the grid) below
/// which the integrand of `Θ` is treated as singular.
pub const DENOMINATOR_GUARD: f64 = 1e-13;

/// Per-step increase of `J` tolerated as quadrature roundoff.
pub const J_SLACK: f64 = 1e-9;

/// Distances from the probed fixed point below this count as roundoff.
pub const ESCAPE_FLOOR: f64 = 1e-12;

/// Thresholds used to sort fixed points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationThresholds {
    /// Eigenvalue threshold for numerical rank.
    pub rank: f64,
    /// Minimum eigenvalue above which a state counts as positive definite.
    pub definiteness: f64,
    /// The moment residual must stay below `cond2_factor * tol`.
    pub cond2_factor: f64,
}

impl Default for ClassificationThresholds {
    fn default() -> Self {
        Self {
            rank: RANK_TOL,
            definiteness: 1e-8,
            cond2_factor: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once `||Θ(Λ) - Λ||_F <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub thresholds: ClassificationThresholds,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
            thresholds: ClassificationThresholds::default(),
        }
    }
}

/// A point of the iteration together with its cost.
#[derive(Clone, Debug)]
pub struct IterationState {
    pub lambda: StateMatrix,
    pub k: usize,
    pub j_value: f64,
    /// `min_θ G*ΛG` over the grid.
    pub denominator_floor: f64,
    forms: Vec<f64>,
}

impl IterationState {
    pub fn new(prob: &NormalizedProblem, lambda: StateMatrix, k: usize) -> Self {
        let forms = prob.response().quadratic_forms(lambda.matrix());
        let denominator_floor = forms.iter().copied().fold(f64::INFINITY, f64::min);
        let j_value = if denominator_floor > 0.0 {
            lambda.trace() - log_integral(prob, &forms)
        } else {
            cost_j_limit(prob, &lambda).value
        };
        Self {
            lambda,
            k,
            j_value,
            denominator_floor,
            forms,
        }
    }

    /// Quadratic forms `G*ΛG` at the grid nodes.
    pub fn forms(&self) -> &[f64] {
        &self.forms
    }
}

/// One row of the solver trajectory, describing `Λ_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub j: f64,
    /// `J(Θ(Λ_k)) - J(Λ_k)`.
    pub delta_j: f64,
    /// `||Θ(Λ_k) - Λ_k||_F`.
    pub fp_residual: f64,
    pub min_eig: f64,
    /// `|tr Λ_k - 1|`.
    pub trace_err: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    BoundaryProximity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedPointVariant {
    PositiveDefinite,
    SingularSolving,
    SingularNonSolving,
    NotFixedPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointClass {
    #[serde(rename = "classification")]
    pub variant: FixedPointVariant,
    /// `min_θ G*ΛG`.
    pub cond1_margin: f64,
    /// `||Γ(Ψ / G*ΛG) - I||_F`, absent when the margin is not positive.
    pub cond2_residual: Option<f64>,
    /// `||Θ(Λ) - Λ||_F`, absent when `Θ(Λ)` cannot be evaluated.
    pub fp_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub trajectory: Vec<TrajectoryRow>,
    pub final_lambda: StateMatrix,
    #[serde(flatten)]
    pub classification: FixedPointClass,
    pub phi_hat: Option<Vec<f64>>,
    pub moment_residual: Option<f64>,
    pub iterations_used: usize,
    pub termination: Termination,
}

fn check_dim(prob: &NormalizedProblem, n: usize) -> Result<()> {
    if n != prob.dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.dim(),
            got: n,
        });
    }
    Ok(())
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// `∫ Ψ log q`.
fn log_integral(prob: &NormalizedProblem, forms: &[f64]) -> f64 {
    let w = prob.grid().weight();
    prob.psi()
        .iter()
        .zip(forms)
        .map(|(p, q)| p * q.ln())
        .sum::<f64>()
        * w
}

/// `Θ(Λ)` before it is wrapped as a state: no trace renormalization, so
/// `|tr - 1|` measures the quadrature identity `tr Θ(Λ) = ∫Ψ`.
pub fn theta_raw(prob: &NormalizedProblem, lambda: &StateMatrix) -> Result<HermitianMatrix> {
    check_dim(prob, lambda.dim())?;
    let s = principal_sqrt(lambda);
    let vectors: Vec<DVector<Complex64>> = prob
        .response()
        .samples()
        .iter()
        .map(|g| s.as_matrix() * g)
        .collect();
    // Using |Λ^{1/2} G|^2 as the denominator makes the trace identity exact
    // up to roundoff in the sum.
    let forms: Vec<f64> = vectors.iter().map(|v| v.norm_squared()).collect();
    let (floor, top) = min_max(&forms);
    let guard = DENOMINATOR_GUARD * top;
    if !(floor > guard) {
        return Err(Error::BoundaryProximity { floor, guard });
    }
    let weights: Vec<f64> = prob.psi().iter().zip(&forms).map(|(p, q)| p / q).collect();
    Ok(weighted_outer_sum(prob.grid(), &vectors, &weights))
}

pub fn theta_step(prob: &NormalizedProblem, lambda: &StateMatrix) -> Result<StateMatrix> {
    StateMatrix::new(theta_raw(prob, lambda)?)
}

/// `Θ(xx*) = xx*`: the numerator and the denominator of the integrand are
/// both `|x*G|^2`, so the quadrature is skipped entirely.
pub fn theta_rank_one(prob: &NormalizedProblem, x: &DVector<Complex64>) -> Result<StateMatrix> {
    check_dim(prob, x.len())?;
    StateMatrix::rank_one(x)
}

/// Unit eigenvector spanning the range of a numerically rank-one state.
fn rank_one_direction(lambda: &StateMatrix, rank_tol: f64) -> Option<DVector<Complex64>> {
    let eig = lambda.matrix().eigen();
    let rank = eig.values.iter().filter(|&&v| v > rank_tol).count();
    if rank == 1 && lambda.dim() > 1 {
        let top = eig.values.len() - 1;
        Some(eig.vectors.column(top).into_owned())
    } else {
        None
    }
}

/// One step of the iteration; rank-one states take the algebraic path.
fn advance(prob: &NormalizedProblem, lambda: &StateMatrix, rank_tol: f64) -> Result<StateMatrix> {
    match rank_one_direction(lambda, rank_tol) {
        Some(x) => theta_rank_one(prob, &x),
        None => theta_step(prob, lambda),
    }
}

/// `J(Λ)` by quadrature.
pub fn cost_j(prob: &NormalizedProblem, lambda: &StateMatrix) -> Result<f64> {
    cost_j_hermitian(prob, lambda.matrix())
}

/// `J` for any Hermitian multiplier with `G*ΛG > 0` at every node; used by
/// the dual solver, whose iterates carry no trace constraint.
pub fn cost_j_hermitian(prob: &NormalizedProblem, lambda: &HermitianMatrix) -> Result<f64> {
    check_dim(prob, lambda.dim())?;
    let forms = prob.response().quadratic_forms(lambda);
    if let Some((node, &value)) = forms.iter().enumerate().find(|(_, &q)| !(q > 0.0)) {
        return Err(Error::LogOfNonpositive { node, value });
    }
    Ok(lambda.trace() - log_integral(prob, &forms))
}

/// `J` with nodes at or below the denominator guard left out of the
/// quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitCost {
    pub value: f64,
    /// Indices of the excluded nodes.
    pub excluded: Vec<usize>,
}

/// Value of `J` at a state whose quadratic form may vanish at grid nodes.
/// The log singularity is integrable, so dropping the offending nodes
/// biases the result by `O(log N / N)`.
pub fn cost_j_limit(prob: &NormalizedProblem, lambda: &StateMatrix) -> LimitCost {
    let forms = prob.response().quadratic_forms(lambda.matrix());
    let mask = node_mask(&forms);
    let w = prob.grid().weight();
    let mut excluded = Vec::new();
    let mut acc = 0.0;
    for (k, (&q, &p)) in forms.iter().zip(prob.psi()).enumerate() {
        if mask[k] {
            acc += p * q.ln();
        } else {
            excluded.push(k);
        }
    }
    LimitCost {
        value: lambda.trace() - acc * w,
        excluded,
    }
}

fn node_mask(forms: &[f64]) -> Vec<bool> {
    let (_, top) = min_max(forms);
    let guard = DENOMINATOR_GUARD * top;
    forms.iter().map(|&q| q > guard).collect()
}

/// `J(next) - J(current)` from the two sets of quadratic forms, summing
/// `log1p` of the relative change so that small decrements are not lost to
/// cancellation between two O(1) costs.
fn cost_difference(prob: &NormalizedProblem, tr_diff: f64, current: &[f64], next: &[f64]) -> f64 {
    let w = prob.grid().weight();
    let log_ratio: f64 = prob
        .psi()
        .iter()
        .zip(current.iter().zip(next))
        .map(|(p, (q0, q1))| p * ((q1 - q0) / q0).ln_1p())
        .sum();
    tr_diff - log_ratio * w
}

/// `ΔJ(Λ) = J(Θ(Λ)) - J(Λ)`.
pub fn delta_j(prob: &NormalizedProblem, lambda: &StateMatrix) -> Result<f64> {
    let next = theta_step(prob, lambda)?;
    let q0 = prob.response().quadratic_forms(lambda.matrix());
    let q1 = prob.response().quadratic_forms(next.matrix());
    if let Some((node, &value)) = q1.iter().enumerate().find(|(_, &q)| !(q > 0.0)) {
        return Err(Error::LogOfNonpositive { node, value });
    }
    Ok(cost_difference(prob, next.trace() - lambda.trace(), &q0, &q1))
}

/// Right-sided derivative of `J` at `Λ` along `Δ`:
/// `tr Δ - ∫ Ψ G*ΔG / G*ΛG`.
pub fn directional_derivative(
    prob: &NormalizedProblem,
    lambda: &HermitianMatrix,
    direction: &HermitianMatrix,
) -> Result<f64> {
    check_dim(prob, lambda.dim())?;
    check_dim(prob, direction.dim())?;
    let forms = prob.response().quadratic_forms(lambda);
    let (floor, top) = min_max(&forms);
    let guard = DENOMINATOR_GUARD * top;
    if !(floor > guard) {
        return Err(Error::LogSingularDirection { floor, guard });
    }
    let along = prob.response().quadratic_forms(direction);
    let w = prob.grid().weight();
    let integral: f64 = prob
        .psi()
        .iter()
        .zip(along.iter().zip(&forms))
        .map(|(p, (d, q))| p * d / q)
        .sum::<f64>()
        * w;
    Ok(direction.trace() - integral)
}

/// `Φ̂ = Ψ / G*ΛG` on the grid.
pub fn reconstruct_phi(prob: &NormalizedProblem, lambda: &HermitianMatrix) -> Result<Vec<f64>> {
    check_dim(prob, lambda.dim())?;
    let forms = prob.response().quadratic_forms(lambda);
    let (floor, top) = min_max(&forms);
    if !(floor > DENOMINATOR_GUARD * top) {
        return Err(Error::Cond1Violated(floor));
    }
    Ok(prob.psi().iter().zip(&forms).map(|(p, q)| p / q).collect())
}

/// `||Γ(φ) - I||_F`.
pub fn moment_residual(prob: &NormalizedProblem, phi: &[f64]) -> Result<f64> {
    let gamma = gamma_apply(prob.response(), phi)?;
    Ok((&gamma - &HermitianMatrix::identity(prob.dim())).frobenius_norm())
}

pub fn classify_fixed_point(
    prob: &NormalizedProblem,
    lambda: &StateMatrix,
    tol: f64,
    thresholds: &ClassificationThresholds,
) -> FixedPointClass {
    let forms = prob.response().quadratic_forms(lambda.matrix());
    let (cond1_margin, top) = min_max(&forms);
    let cond1 = cond1_margin > DENOMINATOR_GUARD * top;
    let cond2_residual = if cond1 {
        let phi: Vec<f64> = prob.psi().iter().zip(&forms).map(|(p, q)| p / q).collect();
        moment_residual(prob, &phi).ok()
    } else {
        None
    };
    let fp_residual = advance(prob, lambda, thresholds.rank)
        .ok()
        .map(|next| (next.matrix() - lambda.matrix()).frobenius_norm());
    let solves = cond1 && cond2_residual.is_some_and(|r| r <= thresholds.cond2_factor * tol);
    let variant = match fp_residual {
        Some(r) if r <= tol => {
            if lambda.matrix().min_eigenvalue() > thresholds.definiteness {
                if solves {
                    FixedPointVariant::PositiveDefinite
                } else {
                    FixedPointVariant::NotFixedPoint
                }
            } else if solves {
                FixedPointVariant::SingularSolving
            } else {
                FixedPointVariant::SingularNonSolving
            }
        }
        _ => FixedPointVariant::NotFixedPoint,
    };
    FixedPointClass {
        variant,
        cond1_margin,
        cond2_residual,
        fp_residual,
    }
}

/// Runs the iteration from `lambda0` until the fixed-point residual drops
/// below `config.tol`.
///
/// Reaching the iteration cap or the boundary of the state space is an
/// outcome recorded in the report. A step that raises `J` by more than
/// [`J_SLACK`] is an error: it cannot happen for a correct `Θ`.
pub fn solve(prob: &NormalizedProblem, lambda0: StateMatrix, config: &SolverConfig) -> Result<SolveReport> {
    check_dim(prob, lambda0.dim())?;
    let mut state = IterationState::new(prob, lambda0, 0);
    let mut trajectory = Vec::new();
    let termination = loop {
        let next = match advance(prob, &state.lambda, config.thresholds.rank) {
            Ok(next) => next,
            Err(Error::BoundaryProximity { .. }) => break Termination::BoundaryProximity,
            Err(e) => return Err(e),
        };
        let next_state = IterationState::new(prob, next, state.k + 1);
        let delta_j = if state.denominator_floor > 0.0 && next_state.denominator_floor > 0.0 {
            cost_difference(
                prob,
                next_state.lambda.trace() - state.lambda.trace(),
                state.forms(),
                next_state.forms(),
            )
        } else {
            next_state.j_value - state.j_value
        };
        let fp_residual = (next_state.lambda.matrix() - state.lambda.matrix()).frobenius_norm();
        trajectory.push(TrajectoryRow {
            k: state.k,
            j: state.j_value,
            delta_j,
            fp_residual,
            min_eig: state.lambda.min_eigenvalue(),
            trace_err: (state.lambda.trace() - 1.0).abs(),
        });
        if delta_j > J_SLACK {
            return Err(Error::MonotonicityViolation {
                iteration: state.k,
                increase: delta_j,
            });
        }
        if fp_residual <= config.tol {
            break Termination::Converged;
        }
        if state.k + 1 >= config.max_iter {
            state = next_state;
            break Termination::MaxIterations;
        }
        state = next_state;
    };
    let classification = classify_fixed_point(prob, &state.lambda, config.tol, &config.thresholds);
    let phi_hat = if termination == Termination::Converged {
        reconstruct_phi(prob, state.lambda.matrix()).ok()
    } else {
        None
    };
    let moment_residual = match &phi_hat {
        Some(phi) => Some(moment_residual(prob, phi)?),
        None => None,
    };
    Ok(SolveReport {
        trajectory,
        final_lambda: state.lambda,
        classification,
        phi_hat,
        moment_residual,
        iterations_used: state.k,
        termination,
    })
}

/// For `n = 2`, the unit vector orthogonal to `G(e^{jθ̄})`; the projection
/// onto it is a fixed point whose quadratic form vanishes at `θ̄`.
pub fn construct_n0_member(prob: &NormalizedProblem, theta_bar: f64) -> Result<DVector<Complex64>> {
    if prob.dim() != 2 {
        return Err(Error::UnsupportedDimension(prob.dim()));
    }
    let k = prob
        .grid()
        .node_index(theta_bar)
        .ok_or(Error::NotGridNode(theta_bar))?;
    let g = prob.response().sample(k);
    let x = DVector::from_vec(vec![-g[1].conj(), g[0].conj()]);
    let norm = x.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(x.unscale(norm))
}

/// Outcome of perturbing a boundary fixed point `xx*` towards `I/n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstabilityProbe {
    pub eps: f64,
    /// `J` at `xx*`, singular nodes excluded.
    pub j_at_p: f64,
    /// `J` at `(1-ε) xx* + ε I/n` on the same node set.
    pub j_at_perturbed: f64,
    /// Whether the iteration from the perturbed state moved farther than
    /// `max(ε, ESCAPE_FLOOR)` from `xx*` (Frobenius norm) within the
    /// iteration budget.
    pub escaped: bool,
    /// First iteration at which the distance exceeded `ε`.
    pub escape_iteration: Option<usize>,
    /// Distance from `xx*` at the last iterate computed.
    pub final_distance: f64,
    /// Nodes left out of both cost evaluations.
    pub excluded_nodes: Vec<usize>,
}

/// Evaluates `J` at the boundary fixed point `xx*` and at an interior
/// perturbation of it, then iterates from the perturbation.
///
/// Both costs use the same node set, the one on which `G*xx*G` clears the
/// denominator guard, so their difference is exact quadrature of
/// `∫ Ψ log(1 + ε (G*G/n - |x*G|^2) / |x*G|^2)`.
pub fn instability_probe(
    prob: &NormalizedProblem,
    x_bar: &DVector<Complex64>,
    eps: f64,
    max_iter: usize,
) -> Result<InstabilityProbe> {
    check_dim(prob, x_bar.len())?;
    if !(eps.is_finite() && (0.0..=1.0).contains(&eps)) {
        return Err(Error::NonFinite("perturbation size"));
    }
    let n = prob.dim();
    let p = StateMatrix::rank_one(x_bar)?;
    let limit = cost_j_limit(prob, &p);
    let perturbed = StateMatrix::new(
        &p.matrix().scale(1.0 - eps) + &HermitianMatrix::identity(n).scale(eps / n as f64),
    )?;

    let q_p = prob.response().quadratic_forms(p.matrix());
    let q_i: Vec<f64> = prob
        .response()
        .samples()
        .iter()
        .map(|g| g.norm_squared() / n as f64)
        .collect();
    let w = prob.grid().weight();
    let mut drop = 0.0;
    for (k, &psi) in prob.psi().iter().enumerate() {
        if limit.excluded.binary_search(&k).is_err() {
            drop += psi * (eps * (q_i[k] - q_p[k]) / q_p[k]).ln_1p();
        }
    }
    // Both states have unit trace, so only the log term changes.
    let j_at_perturbed = limit.value - drop * w;

    let radius = eps.max(ESCAPE_FLOOR);
    let mut current = perturbed;
    let mut distance = (current.matrix() - p.matrix()).frobenius_norm();
    let mut escape_iteration = (distance > radius).then_some(0);
    let mut k = 0;
    while escape_iteration.is_none() && k < max_iter {
        current = advance(prob, &current, RANK_TOL)?;
        k += 1;
        distance = (current.matrix() - p.matrix()).frobenius_norm();
        if distance > radius {
            escape_iteration = Some(k);
        }
    }
    Ok(InstabilityProbe {
        eps,
        j_at_p: limit.value,
        j_at_perturbed,
        escaped: escape_iteration.is_some(),
        escape_iteration,
        final_distance: distance,
        excluded_nodes: limit.excluded,
    })
}
