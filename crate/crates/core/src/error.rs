use thiserror::Error;

/// Errors raised by the spectral approximation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian (asymmetry {asymmetry:e}, allowed {allowed:e})")]
    NonHermitianInput { asymmetry: f64, allowed: f64 },

    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("trace is not one (got {0})")]
    TraceNotUnit(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid grid size {0}: must be a power of two and at least 64")]
    InvalidGridSize(usize),

    #[error("A is not Schur stable (spectral radius {0})")]
    NotSchurStable(f64),

    #[error("pair (A, B) is not reachable (singular value ratio {0:e})")]
    NotReachable(f64),

    #[error("covariance is not positive definite (min eigenvalue {0:e})")]
    SigmaNotPositiveDefinite(f64),

    #[error("prior spectrum is not strictly positive at node {0}")]
    NonpositivePrior(usize),

    #[error("prior denominator polynomial comes within {0:e} of a zero on the unit circle")]
    DenominatorNotZeroFree(f64),

    #[error("spectral density is not strictly positive at node {0}")]
    NonpositivePhi(usize),

    #[error("quadratic form G*XG is not positive at node {node} (value {value:e})")]
    LogOfNonpositive { node: usize, value: f64 },

    #[error("iterate is numerically on the boundary: min G*LG = {floor:e} <= guard {guard:e}")]
    BoundaryProximity { floor: f64, guard: f64 },

    #[error("directional derivative diverges: min G*LG = {floor:e} <= guard {guard:e}")]
    LogSingularDirection { floor: f64, guard: f64 },

    #[error("optimality condition G*LG > 0 fails (margin {0:e})")]
    Cond1Violated(f64),

    #[error("operation supports only n = 2, got n = {0}")]
    UnsupportedDimension(usize),

    #[error("angle {0} is not a node of the quadrature grid")]
    NotGridNode(f64),

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("nullspace dimension depends on the grid: {coarse} at N, {fine} at 2N")]
    GridDependentNullspace { coarse: usize, fine: usize },

    #[error("dual cost increased by {increase:e} at iteration {iteration}")]
    MonotonicityViolation { iteration: usize, increase: f64 },

    #[error("line search stalled at iteration {iteration} (step {step:e})")]
    LineSearchStalled { iteration: usize, step: f64 },

    #[error("no convergence after {0} iterations")]
    MaxIterations(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
