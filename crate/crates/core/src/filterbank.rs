//! Rational filter banks `G(z) = (zI - A)^{-1} B` and their samples on a
//! uniform grid of the unit circle.
//!
//! Integrals are taken with respect to the normalized Lebesgue measure
//! `dθ / 2π`, approximated by equal weights `1/N` on the nodes
//! `θ_k = -π + 2πk/N`. For the smooth periodic integrands met here the rule
//! converges geometrically in `N`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;

/// Poles must satisfy `|λ| < 1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Smallest-to-largest singular value ratio required of the reachability
/// matrix.
pub const REACHABILITY_TOL: f64 = 1e-9;

pub const MIN_GRID_SIZE: usize = 64;
pub const DEFAULT_GRID_SIZE: usize = 2048;

/// A validated single-input filter bank: `A` Schur stable, `(A, B)` reachable.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    a: DMatrix<Complex64>,
    b: DVector<Complex64>,
    spectral_radius: f64,
}

impl FilterBank {
    pub fn new(a: DMatrix<Complex64>, b: DVector<Complex64>) -> Result<Self> {
        validate_filterbank(a, b)
    }

    /// Convenience constructor for real data; `a` is row-major.
    pub fn from_real(n: usize, a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: a.len(),
            });
        }
        let a = DMatrix::from_fn(n, n, |i, j| Complex64::new(a[i * n + j], 0.0));
        let b = DVector::from_iterator(b.len(), b.iter().map(|&v| Complex64::new(v, 0.0)));
        Self::new(a, b)
    }

    /// Diagonal `A` with the given real poles.
    pub fn diagonal(poles: &[f64], b: &[f64]) -> Result<Self> {
        let n = poles.len();
        let mut a = vec![0.0; n * n];
        for (i, &p) in poles.iter().enumerate() {
            a[i * n + i] = p;
        }
        Self::from_real(n, &a, b)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<Complex64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<Complex64> {
        &self.b
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// `G(e^{jθ}) = (e^{jθ} I - A)^{-1} B`.
    pub fn eval(&self, theta: f64) -> DVector<Complex64> {
        let n = self.dim();
        let z = Complex64::from_polar(1.0, theta);
        let mut m = -&self.a;
        for i in 0..n {
            m[(i, i)] += z;
        }
        // Schur stability keeps zI - A invertible on the circle.
        m.lu()
            .solve(&self.b)
            .expect("zI - A is invertible for a Schur stable A")
    }

    /// `[B, AB, ..., A^{n-1}B]`.
    pub fn reachability_matrix(&self) -> DMatrix<Complex64> {
        reachability_matrix(&self.a, &self.b)
    }
}

fn reachability_matrix(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> DMatrix<Complex64> {
    let n = b.len();
    let mut out = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        out.set_column(k, &col);
        col = a * col;
    }
    out
}

fn spectral_radius(a: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    if n == 1 {
        return a[(0, 0)].norm();
    }
    // Complex Schur form is upper triangular; its diagonal holds the poles.
    let t = Schur::new(a.clone()).unpack().1;
    (0..n).map(|i| t[(i, i)].norm()).fold(0.0, f64::max)
}

/// Checks Schur stability and reachability of `(A, B)`.
pub fn validate_filterbank(a: DMatrix<Complex64>, b: DVector<Complex64>) -> Result<FilterBank> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare(a.nrows(), a.ncols()));
    }
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if a.iter().chain(b.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("filter bank"));
    }
    let rho = spectral_radius(&a);
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(Error::NotSchurStable(rho));
    }
    let sv = reachability_matrix(&a, &b).singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    if !(largest > 0.0 && smallest > REACHABILITY_TOL * largest) {
        let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
        return Err(Error::NotReachable(ratio));
    }
    Ok(FilterBank {
        a,
        b,
        spectral_radius: rho,
    })
}

/// Discrete Lyapunov solve `P = A P A* + Q` by vectorization. Intended for
/// the small dimensions used here (the system is `n^2 x n^2`).
pub fn discrete_lyapunov(a: &DMatrix<Complex64>, q: &HermitianMatrix) -> Result<HermitianMatrix> {
    let n = a.nrows();
    if q.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.dim(),
        });
    }
    // Column-major vec: vec(A P A*) = (conj(A) ⊗ A) vec(P).
    let kron = a.map(|z| z.conj()).kronecker(a);
    let system = DMatrix::<Complex64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_iterator(n * n, q.as_matrix().iter().copied());
    let vec_p = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotSchurStable(spectral_radius(a)))?;
    Ok(HermitianMatrix::hermitize(DMatrix::from_column_slice(
        n,
        n,
        vec_p.as_slice(),
    )))
}

/// Uniform grid `θ_k = -π + 2πk/N` with weights `1/N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CircleGrid {
    size: usize,
}

impl CircleGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size < MIN_GRID_SIZE || !size.is_power_of_two() {
            return Err(Error::InvalidGridSize(size));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn node(&self, k: usize) -> f64 {
        -PI + 2.0 * PI * k as f64 / self.size as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).map(|k| self.node(k))
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.size as f64
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.size as f64
    }

    /// Index of the node at `theta` (any representative modulo 2π), if
    /// `theta` lies within `1e-9` of a node.
    pub fn node_index(&self, theta: f64) -> Option<usize> {
        if !theta.is_finite() {
            return None;
        }
        let pos = (theta + PI).rem_euclid(2.0 * PI) / self.spacing();
        let k = pos.round();
        if (pos - k).abs() * self.spacing() > 1e-9 {
            return None;
        }
        Some(k as usize % self.size)
    }

    pub fn doubled(&self) -> Self {
        Self {
            size: self.size * 2,
        }
    }
}

impl Default for CircleGrid {
    fn default() -> Self {
        Self {
            size: DEFAULT_GRID_SIZE,
        }
    }
}

/// `(1/N) Σ samples[k]`, accumulated in index order.
pub fn integrate_scalar(grid: &CircleGrid, samples: &[f64]) -> Result<f64> {
    if samples.len() != grid.size() {
        return Err(Error::LengthMismatch {
            expected: grid.size(),
            got: samples.len(),
        });
    }
    Ok(samples.iter().sum::<f64>() * grid.weight())
}

/// Entrywise counterpart of [`integrate_scalar`]; the result is
/// re-Hermitized.
pub fn integrate_matrix(grid: &CircleGrid, samples: &[HermitianMatrix]) -> Result<HermitianMatrix> {
    if samples.len() != grid.size() {
        return Err(Error::LengthMismatch {
            expected: grid.size(),
            got: samples.len(),
        });
    }
    let n = samples[0].dim();
    let mut acc = DMatrix::<Complex64>::zeros(n, n);
    for s in samples {
        if s.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.dim(),
            });
        }
        acc += s.as_matrix();
    }
    Ok(HermitianMatrix::hermitize(acc * Complex64::new(grid.weight(), 0.0)))
}

/// `(1/N) Σ weights[k] v_k v_k*` accumulated in index order, without
/// materializing the per-node matrices.
pub(crate) fn weighted_outer_sum(
    grid: &CircleGrid,
    vectors: &[DVector<Complex64>],
    weights: &[f64],
) -> HermitianMatrix {
    let n = vectors[0].len();
    let mut acc = DMatrix::<Complex64>::zeros(n, n);
    for (v, &w) in vectors.iter().zip(weights) {
        for j in 0..n {
            let vj = v[j].conj() * w;
            for i in 0..n {
                acc[(i, j)] += v[i] * vj;
            }
        }
    }
    HermitianMatrix::hermitize(acc * Complex64::new(grid.weight(), 0.0))
}

/// Samples of `G` on a grid.
#[derive(Clone, Debug)]
pub struct GridResponse {
    grid: CircleGrid,
    filterbank: FilterBank,
    samples: Vec<DVector<Complex64>>,
}

impl GridResponse {
    pub fn new(filterbank: FilterBank, grid: CircleGrid) -> Self {
        let samples = grid.nodes().map(|t| filterbank.eval(t)).collect();
        Self {
            grid,
            filterbank,
            samples,
        }
    }

    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }

    pub fn filterbank(&self) -> &FilterBank {
        &self.filterbank
    }

    pub fn dim(&self) -> usize {
        self.filterbank.dim()
    }

    pub fn samples(&self) -> &[DVector<Complex64>] {
        &self.samples
    }

    pub fn sample(&self, k: usize) -> &DVector<Complex64> {
        &self.samples[k]
    }

    /// `G_θ* X G_θ` at every node.
    pub fn quadratic_forms(&self, x: &HermitianMatrix) -> Vec<f64> {
        self.samples.iter().map(|g| x.quadratic_form(g)).collect()
    }

    /// The same filter bank sampled on a grid of twice the size.
    pub fn refined(&self) -> Self {
        Self::new(self.filterbank.clone(), self.grid.doubled())
    }
}
