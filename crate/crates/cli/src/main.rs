//! `klspec`: command-line front end for the fixed-point solver, the dual
//! cross-check and the boundary instability probe.
//!
//! Exit codes: 0 success, 1 bad input, 2 infeasible covariance, 3 iterate
//! reached the boundary, 4 no convergence, 5 cost increased along the
//! iteration. Every non-zero exit writes one JSON line to standard error.

mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use klspec::dual::{dual_solve, DualConfig};
use klspec::pf::{
    self, classify_fixed_point, construct_n0_member, instability_probe, moment_residual,
    reconstruct_phi, ClassificationThresholds, FixedPointClass, FixedPointVariant, SolveReport,
    SolverConfig, Termination, J_SLACK,
};
use klspec::problem::{check_feasibility, FeasibilityReport, Provenance, RangeGammaSplit};
use klspec::{normalize, CircleGrid, Error, FilterBank, HermitianMatrix, NormalizedProblem, RawProblem, StateMatrix};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{InputError, Lambda0, ProblemConfig};
use crate::output::ProbeRow;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "klspec", version, about = "KL spectral approximation with moment constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the fixed-point iteration and report the limit.
    Solve {
        config: PathBuf,
        /// JSON report (standard output when absent).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        phi_csv: Option<PathBuf>,
        #[arg(long)]
        trajectory_csv: Option<PathBuf>,
        /// Add wall-clock time to the report. Makes the report non-reproducible.
        #[arg(long)]
        timing: bool,
    },
    /// Test whether the covariance is compatible with the filter bank.
    CheckFeasibility { config: PathBuf },
    /// Minimize the dual cost directly by projected gradient descent.
    DualSolve {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        phi_csv: Option<PathBuf>,
        #[arg(long)]
        trajectory_csv: Option<PathBuf>,
        /// A `solve` report for the same problem; prints the sup-norm
        /// discrepancy between the two spectra, relative to the stored one.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = DualConfig::default().max_iter)]
        max_iter: usize,
        #[arg(long)]
        timing: bool,
    },
    /// Perturb the boundary fixed point at a grid angle towards I/n and
    /// iterate from there. Only for n = 2.
    ProbeInstability {
        config: PathBuf,
        /// Grid angle in radians.
        #[arg(long, allow_hyphen_values = true)]
        theta_bar: f64,
        /// Comma-separated perturbation sizes in [0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        eps_list: Vec<f64>,
        /// CSV output (standard output when absent).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
    },
}

/// Why the process exits non-zero.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    key: Option<String>,
    message: String,
}

impl Failure {
    fn input(key: impl Into<String>, message: impl ToString) -> Self {
        Self {
            code: 1,
            kind: "input",
            key: Some(key.into()),
            message: message.to_string(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self::input(path.display().to_string(), err)
    }

    fn report(&self) {
        let line = json!({
            "error": self.kind,
            "key": self.key,
            "message": self.message,
            "exit_code": self.code,
        });
        eprintln!("{line}");
    }
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Self::input(e.key, e.message)
    }
}

/// Maps a solver error to an exit code; `key` is used for input errors
/// whose origin the error itself does not pin down.
fn classify(err: Error, key: &str) -> Failure {
    let (code, kind) = match err {
        Error::BoundaryProximity { .. } | Error::LogSingularDirection { .. } => (3, "boundary"),
        Error::MaxIterations(_) | Error::LineSearchStalled { .. } => (4, "no-convergence"),
        Error::MonotonicityViolation { .. } => (5, "monotonicity"),
        _ => return Failure::input(input_key(&err, key), err),
    };
    Failure {
        code,
        kind,
        key: None,
        message: err.to_string(),
    }
}

fn input_key<'a>(err: &Error, fallback: &'a str) -> &'a str {
    match err {
        Error::NotSchurStable(_) | Error::NotSquare(..) => "A",
        Error::NotReachable(_) => "B",
        Error::SigmaNotPositiveDefinite(_) => "Sigma",
        Error::NonpositivePrior(_) | Error::DenominatorNotZeroFree(_) => "psi",
        Error::InvalidGridSize(_) | Error::GridDependentNullspace { .. } => "grid_size",
        _ => fallback,
    }
}

fn load(path: &Path) -> Result<ProblemConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    Ok(config::parse(&text)?)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn emit(path: Option<&Path>, contents: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn feasibility(config: &ProblemConfig) -> Result<(FilterBank, HermitianMatrix, FeasibilityReport), Failure> {
    let fb = FilterBank::new(config.a_matrix(), config.b_vector()).map_err(|e| classify(e, "A"))?;
    let sigma = HermitianMatrix::new(config.sigma_matrix()).map_err(|e| Failure::input("Sigma", e))?;
    let report = check_feasibility(&fb, &sigma).map_err(|e| classify(e, "Sigma"))?;
    Ok((fb, sigma, report))
}

fn infeasible(report: &FeasibilityReport) -> Failure {
    Failure {
        code: 2,
        kind: "infeasible",
        key: Some("Sigma".into()),
        message: format!(
            "Sigma is not a state covariance of (A, B): residual {:e} exceeds {:e}",
            report.residual, report.threshold
        ),
    }
}

/// A feasible problem, normalized, with the raw prior kept for output.
struct Setup {
    config: ProblemConfig,
    feasibility: FeasibilityReport,
    prob: NormalizedProblem,
    psi_raw: Vec<f64>,
}

impl Setup {
    fn load(path: &Path) -> Result<Self, Failure> {
        let config = load(path)?;
        let (fb, sigma, feasibility) = feasibility(&config)?;
        if !feasibility.feasible {
            return Err(infeasible(&feasibility));
        }
        let grid = CircleGrid::new(config.grid_size).map_err(|e| Failure::input("grid_size", e))?;
        let raw = RawProblem::new(fb, sigma, grid, &config.psi).map_err(|e| classify(e, "psi"))?;
        let prob = normalize(&raw).map_err(|e| classify(e, "Sigma"))?;
        Ok(Self {
            psi_raw: raw.psi_raw().to_vec(),
            config,
            feasibility,
            prob,
        })
    }

    fn lambda0(&self) -> Result<StateMatrix, Failure> {
        let n = self.config.n;
        match &self.config.lambda0 {
            Lambda0::ScaledIdentity => Ok(StateMatrix::scaled_identity(n)),
            Lambda0::Matrix { values } => HermitianMatrix::new(DMatrix::from_row_slice(n, n, values))
                .and_then(StateMatrix::new)
                .map_err(|e| Failure::input("lambda0.values", e)),
        }
    }

    fn phi_csv(&self, phi: &[f64]) -> String {
        output::phi_csv(
            self.prob.grid().nodes(),
            &self.prob.denormalize_phi(phi),
            &self.psi_raw,
        )
    }
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    version: &'static str,
    command: &'static str,
    config: &'a ProblemConfig,
    grid_size: usize,
    feasibility: &'a FeasibilityReport,
    provenance: &'a Provenance,
    #[serde(flatten)]
    report: &'a SolveReport,
    /// The limit in the coordinates of the input covariance.
    lambda_raw: HermitianMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_clock_seconds: Option<f64>,
}

#[derive(Serialize)]
struct Comparison {
    report: String,
    discrepancy: f64,
}

/// One row of the dual trajectory.
#[derive(Serialize)]
struct DualRow {
    k: usize,
    j: f64,
    delta_j: f64,
    grad_norm: f64,
}

#[derive(Serialize)]
struct DualOutput<'a> {
    version: &'static str,
    command: &'static str,
    config: &'a ProblemConfig,
    grid_size: usize,
    feasibility: &'a FeasibilityReport,
    provenance: &'a Provenance,
    trajectory: Vec<DualRow>,
    termination: Termination,
    #[serde(flatten)]
    classification: FixedPointClass,
    iterations_used: usize,
    j_value: f64,
    grad_norm: f64,
    final_lambda: &'a HermitianMatrix,
    lambda_raw: HermitianMatrix,
    phi_hat: &'a [f64],
    moment_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    compare: Option<Comparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_clock_seconds: Option<f64>,
}

fn run_solve(
    config: &Path,
    output: Option<&Path>,
    phi_csv: Option<&Path>,
    trajectory_csv: Option<&Path>,
    timing: bool,
) -> Result<(), Failure> {
    let setup = Setup::load(config)?;
    let lambda0 = setup.lambda0()?;
    let solver = SolverConfig {
        tol: setup.config.tol,
        max_iter: setup.config.max_iter,
        ..SolverConfig::default()
    };
    let start = Instant::now();
    let report = pf::solve(&setup.prob, lambda0, &solver).map_err(|e| classify(e, "<problem>"))?;
    let elapsed = start.elapsed().as_secs_f64();

    if let Some((k, increase)) = output::first_increase(&report.trajectory, J_SLACK) {
        return Err(classify(
            Error::MonotonicityViolation {
                iteration: k,
                increase,
            },
            "",
        ));
    }
    if let Some(p) = trajectory_csv {
        write(p, &output::trajectory_csv(&report.trajectory))?;
    }
    if let (Some(p), Some(phi)) = (phi_csv, &report.phi_hat) {
        write(p, &setup.phi_csv(phi))?;
    }
    let doc = SolveOutput {
        version: VERSION,
        command: "solve",
        config: &setup.config,
        grid_size: setup.config.grid_size,
        feasibility: &setup.feasibility,
        provenance: setup.prob.provenance(),
        report: &report,
        lambda_raw: setup.prob.denormalize_lambda(report.final_lambda.matrix()),
        wall_clock_seconds: timing.then_some(elapsed),
    };
    emit(output, &pretty(&doc))?;

    let stopped = |code, kind, message: String| Failure {
        code,
        kind,
        key: None,
        message,
    };
    match report.termination {
        Termination::Converged if report.phi_hat.is_none() && phi_csv.is_some() => {
            eprintln!(
                "{}",
                json!({"warning": "limit violates G*LG > 0; no spectrum written",
                       "cond1_margin": report.classification.cond1_margin})
            );
            Ok(())
        }
        Termination::Converged => Ok(()),
        Termination::MaxIterations => Err(stopped(
            4,
            "no-convergence",
            format!(
                "fixed-point residual above {:e} after {} iterations",
                solver.tol, report.iterations_used
            ),
        )),
        Termination::BoundaryProximity => Err(stopped(
            3,
            "boundary",
            format!("iterate reached the boundary at iteration {}", report.iterations_used),
        )),
    }
}

fn run_check_feasibility(config: &Path) -> Result<(), Failure> {
    let config = load(config)?;
    let (_, _, report) = feasibility(&config)?;
    println!("{}", serde_json::to_string(&report).expect("reports serialize"));
    if report.feasible {
        Ok(())
    } else {
        Err(infeasible(&report))
    }
}

/// Sup-norm distance between the dual spectrum and the one implied by the
/// `final_lambda` of a stored `solve` report, relative to the latter.
fn compare_with(setup: &Setup, phi: &[f64], path: &Path) -> Result<f64, Failure> {
    let key = "compare";
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Failure::input(key, e))?;
    let ours = serde_json::to_value(&setup.config).expect("config serializes");
    for field in ["n", "A", "B", "Sigma", "psi", "grid_size"] {
        if doc["config"].get(field) != ours.get(field) {
            return Err(Failure::input(
                key,
                format!("report was produced for a different problem ({field} differs)"),
            ));
        }
    }
    let lambda: StateMatrix = serde_json::from_value(doc["final_lambda"].clone())
        .map_err(|e| Failure::input(key, format!("final_lambda: {e}")))?;
    let reference = reconstruct_phi(&setup.prob, lambda.matrix()).map_err(|e| Failure::input(key, e))?;
    let scale = reference.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let gap = phi
        .iter()
        .zip(&reference)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(gap / scale)
}

/// The dual minimizer is a fixed point of the iteration when it is also a
/// state matrix; otherwise only the optimality conditions are reported.
fn dual_classification(
    prob: &NormalizedProblem,
    lambda: &HermitianMatrix,
    tol: f64,
    residual: f64,
) -> FixedPointClass {
    match StateMatrix::new(lambda.clone()) {
        Ok(state) => classify_fixed_point(prob, &state, tol, &ClassificationThresholds::default()),
        Err(_) => FixedPointClass {
            variant: FixedPointVariant::NotFixedPoint,
            cond1_margin: prob
                .response()
                .quadratic_forms(lambda)
                .into_iter()
                .fold(f64::INFINITY, f64::min),
            cond2_residual: Some(residual),
            fp_residual: None,
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn run_dual(
    config: &Path,
    output: Option<&Path>,
    phi_csv: Option<&Path>,
    trajectory_csv: Option<&Path>,
    compare: Option<&Path>,
    max_iter: usize,
    timing: bool,
) -> Result<(), Failure> {
    let setup = Setup::load(config)?;
    let dual = DualConfig {
        tol: setup.config.tol,
        max_iter,
        ..DualConfig::default()
    };
    let start = Instant::now();
    let split = RangeGammaSplit::new(setup.prob.response()).map_err(|e| classify(e, "grid_size"))?;
    let iterate = dual_solve(&setup.prob, &split, &dual).map_err(|e| classify(e, "<problem>"))?;
    let elapsed = start.elapsed().as_secs_f64();
    let phi = reconstruct_phi(&setup.prob, &iterate.lambda).map_err(|e| classify(e, "<problem>"))?;
    let residual = moment_residual(&setup.prob, &phi).map_err(|e| classify(e, "<problem>"))?;

    let classification = dual_classification(&setup.prob, &iterate.lambda, setup.config.tol, residual);

    let comparison = match compare {
        Some(p) => {
            let discrepancy = compare_with(&setup, &phi, p)?;
            if output.is_some() {
                println!("{}", json!({ "discrepancy": discrepancy }));
            }
            Some(Comparison {
                report: p.display().to_string(),
                discrepancy,
            })
        }
        None => None,
    };
    if let Some(p) = trajectory_csv {
        write(
            p,
            &output::dual_trajectory_csv(&iterate.j_history, &iterate.grad_history),
        )?;
    }
    if let Some(p) = phi_csv {
        write(p, &setup.phi_csv(&phi))?;
    }
    let doc = DualOutput {
        version: VERSION,
        command: "dual-solve",
        config: &setup.config,
        grid_size: setup.config.grid_size,
        feasibility: &setup.feasibility,
        provenance: setup.prob.provenance(),
        iterations_used: iterate.iterations,
        j_value: iterate.j_value,
        grad_norm: iterate.grad_norm,
        final_lambda: &iterate.lambda,
        lambda_raw: setup.prob.denormalize_lambda(&iterate.lambda),
        phi_hat: &phi,
        moment_residual: residual,
        trajectory: iterate
            .j_history
            .iter()
            .zip(&iterate.grad_history)
            .enumerate()
            .map(|(k, (&j, &grad_norm))| DualRow {
                k,
                j,
                delta_j: iterate.j_history.get(k + 1).map_or(0.0, |next| next - j),
                grad_norm,
            })
            .collect(),
        termination: Termination::Converged,
        classification,
        compare: comparison,
        wall_clock_seconds: timing.then_some(elapsed),
    };
    emit(output, &pretty(&doc))
}

fn run_probe(
    config: &Path,
    theta_bar: f64,
    eps_list: &[f64],
    output: Option<&Path>,
    max_iter: usize,
) -> Result<(), Failure> {
    let setup = Setup::load(config)?;
    let x_bar = construct_n0_member(&setup.prob, theta_bar).map_err(|e| match e {
        Error::UnsupportedDimension(_) => Failure::input("n", e),
        other => Failure::input("theta-bar", other),
    })?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let probe = instability_probe(&setup.prob, &x_bar, eps, max_iter).map_err(|e| match e {
            Error::NonFinite(_) => Failure::input("eps-list", format!("{eps} is not in [0, 1]")),
            other => classify(other, "<problem>"),
        })?;
        rows.push(ProbeRow {
            eps,
            j_at_p: probe.j_at_p,
            j_at_perturbed: probe.j_at_perturbed,
            escaped: probe.escaped,
        });
    }
    emit(output, &output::probe_csv(&rows))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve {
            config,
            output,
            phi_csv,
            trajectory_csv,
            timing,
        } => run_solve(
            config,
            output.as_deref(),
            phi_csv.as_deref(),
            trajectory_csv.as_deref(),
            *timing,
        ),
        Command::CheckFeasibility { config } => run_check_feasibility(config),
        Command::DualSolve {
            config,
            output,
            phi_csv,
            trajectory_csv,
            compare,
            max_iter,
            timing,
        } => run_dual(
            config,
            output.as_deref(),
            phi_csv.as_deref(),
            trajectory_csv.as_deref(),
            compare.as_deref(),
            *max_iter,
            *timing,
        ),
        Command::ProbeInstability {
            config,
            theta_bar,
            eps_list,
            output,
            max_iter,
        } => run_probe(config, *theta_bar, eps_list, output.as_deref(), *max_iter),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code)
        }
    }
}
