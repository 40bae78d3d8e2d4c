//! Hermitian matrix primitives.
//!
//! Two value types live here: [`HermitianMatrix`], an arbitrary element of the
//! real vector space of n x n Hermitian matrices, and [`StateMatrix`], a
//! positive semi-definite Hermitian matrix with unit trace. The fixed-point
//! iteration moves on the latter.
//!
//! Eigenvalue work goes through a full Hermitian eigendecomposition; the
//! dimensions involved are small and the principal branch of the square root
//! must be exact.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative asymmetry (in Frobenius norm) tolerated when building a
/// [`HermitianMatrix`] from raw entries.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Eigenvalues in `[-PSD_CLAMP_FLOOR, 0)` are repaired to zero; anything more
/// negative is rejected.
pub const PSD_CLAMP_FLOOR: f64 = 1e-10;

/// Eigenvalues at or below this multiple of `max(1, λ_max)` are treated as
/// eigensolver noise by the square root. It sits at roundoff level on
/// purpose: a larger floor would silently lower the rank of genuinely
/// positive definite iterates, and `Θ` never restores a lost rank.
pub const SQRT_NOISE_FLOOR: f64 = 16.0 * f64::EPSILON;

/// Allowed deviation of the trace of a [`StateMatrix`] from one.
pub const TRACE_TOL: f64 = 1e-10;

/// Default eigenvalue threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// A complex Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(DMatrix<Complex64>);

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Unit eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<Complex64>,
}

impl HermitianEigen {
    /// Rebuilds `V f(D) V*`.
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> HermitianMatrix {
        let n = self.values.len();
        let mut out = DMatrix::<Complex64>::zeros(n, n);
        for (k, &lambda) in self.values.iter().enumerate() {
            let w = f(lambda);
            if w == 0.0 {
                continue;
            }
            let v = self.vectors.column(k);
            for j in 0..n {
                let vj = v[j].conj() * w;
                for i in 0..n {
                    out[(i, j)] += v[i] * vj;
                }
            }
        }
        HermitianMatrix::hermitize(out)
    }
}

impl HermitianMatrix {
    /// Validates that `m` is square and Hermitian up to
    /// `HERMITIAN_TOL * ||m||_F`, then stores its exact Hermitian part.
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare(m.nrows(), m.ncols()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("Hermitian matrix entries"));
        }
        let asymmetry = (&m - m.adjoint()).norm();
        let allowed = HERMITIAN_TOL * m.norm();
        if asymmetry > allowed {
            return Err(Error::NonHermitianInput { asymmetry, allowed });
        }
        Ok(Self::hermitize(m))
    }

    /// Averages `m` with its adjoint. `m` must be square.
    pub(crate) fn hermitize(m: DMatrix<Complex64>) -> Self {
        let adj = m.adjoint();
        let mut h = (m + adj) * Complex64::new(0.5, 0.0);
        for i in 0..h.nrows() {
            h[(i, i)].im = 0.0;
        }
        Self(h)
    }

    /// Builds from row-major real entries (a real symmetric matrix).
    pub fn from_real_rows(n: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: rows.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(rows[i * n + j], 0.0)
        }))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(d[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    /// The rank-one matrix `x x*`.
    pub fn outer(x: &DVector<Complex64>) -> Self {
        Self::hermitize(x * x.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * Complex64::new(s, 0.0))
    }

    /// `x* M x`, real for Hermitian `M`.
    pub fn quadratic_form(&self, x: &DVector<Complex64>) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            let mut col = Complex64::new(0.0, 0.0);
            for i in 0..n {
                col += x[i].conj() * self.0[(i, j)];
            }
            acc += (col * x[j]).re;
        }
        acc
    }

    /// `S M S` for Hermitian `S`; the result is re-Hermitized.
    pub fn congruence(&self, s: &HermitianMatrix) -> Self {
        Self::hermitize(&s.0 * &self.0 * &s.0)
    }

    pub fn eigen(&self) -> HermitianEigen {
        let eig = SymmetricEigen::new(self.0.clone());
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            eig.eigenvectors[(i, order[j])]
        });
        HermitianEigen { values, vectors }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().values.first().copied().unwrap_or(f64::INFINITY)
    }

    /// Number of eigenvalues strictly above `threshold`.
    pub fn numerical_rank(&self, threshold: f64) -> usize {
        self.eigen().values.iter().filter(|&&v| v > threshold).count()
    }

    /// Coordinates in the orthonormal basis `E_ii`, `(E_ij + E_ji)/sqrt2`,
    /// `i(E_ij - E_ji)/sqrt2` (i < j) of the real inner-product space of
    /// Hermitian matrices. The map is an isometry onto `R^{n^2}`.
    pub fn to_real_coords(&self) -> DVector<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            out.push(self.0[(i, i)].re);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let z = self.0[(i, j)];
                out.push(std::f64::consts::SQRT_2 * z.re);
                out.push(std::f64::consts::SQRT_2 * z.im);
            }
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`HermitianMatrix::to_real_coords`].
    pub fn from_real_coords(n: usize, coords: &[f64]) -> Result<Self> {
        if coords.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: coords.len(),
            });
        }
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(coords[i], 0.0);
        }
        let mut idx = n;
        for i in 0..n {
            for j in (i + 1)..n {
                let z = Complex64::new(coords[idx], coords[idx + 1]) / std::f64::consts::SQRT_2;
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
                idx += 2;
            }
        }
        Ok(Self(m))
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: Self) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: Self) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &rhs.0)
    }
}

impl Neg for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn neg(self) -> HermitianMatrix {
        HermitianMatrix(-&self.0)
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        self.scale(rhs)
    }
}

/// Trace inner product `tr(X Y*)`, real for Hermitian arguments.
pub fn trace_inner(x: &HermitianMatrix, y: &HermitianMatrix) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    // tr(X Y*) = sum_ij X_ij conj(Y_ij); the imaginary part cancels.
    Ok(x
        .0
        .iter()
        .zip(y.0.iter())
        .map(|(a, b)| (a * b.conj()).re)
        .sum())
}

pub fn min_eigenvalue(m: &HermitianMatrix) -> f64 {
    m.min_eigenvalue()
}

/// Square root on the spectrum; eigenvalues at or below the noise floor
/// (relative to `max(1, λ_max)`) map to zero, so roundoff-level noise in a
/// kernel is not amplified to its square root.
fn sqrt_spectrum(eig: &HermitianEigen) -> HermitianMatrix {
    let top = eig.values.last().copied().unwrap_or(0.0).max(1.0);
    let floor = SQRT_NOISE_FLOOR * top;
    eig.recompose(|v| if v <= floor { 0.0 } else { v.sqrt() })
}

/// Principal square root of a positive semi-definite matrix.
pub fn psd_sqrt(m: &HermitianMatrix) -> Result<HermitianMatrix> {
    let eig = m.eigen();
    if let Some(&min) = eig.values.first() {
        if min < -PSD_CLAMP_FLOOR {
            return Err(Error::NotPositiveSemidefinite(min));
        }
    }
    Ok(sqrt_spectrum(&eig))
}

/// Inverse principal square root of a positive definite matrix.
pub fn pd_inv_sqrt(m: &HermitianMatrix, floor: f64) -> Result<HermitianMatrix> {
    let eig = m.eigen();
    if let Some(&min) = eig.values.first() {
        if min <= floor {
            return Err(Error::NotPositiveSemidefinite(min));
        }
    }
    Ok(eig.recompose(|v| 1.0 / v.sqrt()))
}

/// Principal square root of a state matrix.
pub fn principal_sqrt(m: &StateMatrix) -> HermitianMatrix {
    sqrt_spectrum(&m.matrix.eigen())
}

/// A positive semi-definite Hermitian matrix with unit trace.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMatrix {
    matrix: HermitianMatrix,
    min_eigenvalue: f64,
    trace: f64,
}

impl StateMatrix {
    /// Validates positivity and unit trace, clamps eigenvalues in
    /// `[-PSD_CLAMP_FLOOR, 0)` to zero and divides by the computed trace.
    pub fn new(m: HermitianMatrix) -> Result<Self> {
        let trace = m.trace();
        if !trace.is_finite() || (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::TraceNotUnit(trace));
        }
        Self::repair_and_normalize(m)
    }

    /// Scales any nonzero positive semi-definite matrix onto unit trace.
    pub fn from_psd(m: HermitianMatrix) -> Result<Self> {
        let trace = m.trace();
        if !(trace.is_finite() && trace > 0.0) {
            return Err(Error::TraceNotUnit(trace));
        }
        Self::repair_and_normalize(m.scale(1.0 / trace))
    }

    fn repair_and_normalize(m: HermitianMatrix) -> Result<Self> {
        let eig = m.eigen();
        let min = eig.values.first().copied().unwrap_or(0.0);
        if min < -PSD_CLAMP_FLOOR {
            return Err(Error::NotPositiveSemidefinite(min));
        }
        let repaired = if min < 0.0 {
            eig.recompose(|v| v.max(0.0))
        } else {
            m
        };
        let trace = repaired.trace();
        let matrix = repaired.scale(1.0 / trace);
        let min_eigenvalue = if min < 0.0 { 0.0 } else { min / trace };
        Ok(Self {
            trace: matrix.trace(),
            matrix,
            min_eigenvalue,
        })
    }

    /// Wraps a matrix that already satisfies the invariants, without
    /// modifying a single bit. Used when reloading serialized states.
    pub fn from_validated(m: HermitianMatrix) -> Result<Self> {
        let trace = m.trace();
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::TraceNotUnit(trace));
        }
        let min = m.min_eigenvalue();
        if min < -PSD_CLAMP_FLOOR {
            return Err(Error::NotPositiveSemidefinite(min));
        }
        Ok(Self {
            matrix: m,
            min_eigenvalue: min,
            trace,
        })
    }

    /// `I / n`.
    pub fn scaled_identity(n: usize) -> Self {
        let matrix = HermitianMatrix::identity(n).scale(1.0 / n as f64);
        Self {
            trace: matrix.trace(),
            matrix,
            min_eigenvalue: 1.0 / n as f64,
        }
    }

    /// The orthogonal projection `x x* / ||x||^2`.
    pub fn rank_one(x: &DVector<Complex64>) -> Result<Self> {
        let norm = x.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::ZeroVector);
        }
        let unit = x.unscale(norm);
        let matrix = HermitianMatrix::outer(&unit);
        Ok(Self {
            trace: matrix.trace(),
            min_eigenvalue: if x.len() == 1 { 1.0 } else { 0.0 },
            matrix,
        })
    }

    pub fn matrix(&self) -> &HermitianMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }
}

impl Serialize for HermitianMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|i| (0..n).map(|j| [self.0[(i, j)].re, self.0[(i, j)].im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(deserializer)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("Hermitian matrix rows must be square"));
        }
        let m = DMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1]));
        // Exact bits are kept: serialized matrices are already Hermitian.
        let asym = (&m - m.adjoint()).norm();
        if asym > HERMITIAN_TOL * m.norm() {
            return Err(serde::de::Error::custom("matrix is not Hermitian"));
        }
        Ok(Self(m))
    }
}

impl Serialize for StateMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.matrix.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StateMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let m = HermitianMatrix::deserialize(deserializer)?;
        StateMatrix::from_validated(m).map_err(serde::de::Error::custom)
    }
}
