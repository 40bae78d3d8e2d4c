//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use klspec::filterbank::{discrete_lyapunov, CircleGrid, FilterBank, GridResponse};
use klspec::linalg::{HermitianMatrix, StateMatrix};
use klspec::problem::{gamma_apply, normalize, NormalizedProblem, PriorSpec, RawProblem};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Covariance used for the two-pole instance. It is feasible (certificate
/// `H = [0.3, 0.45]`) and not the white-noise Gramian, so `I/2` is not
/// already optimal.
pub fn reference_sigma() -> HermitianMatrix {
    HermitianMatrix::from_real_rows(2, &[0.8, 0.6, 0.6, 1.2]).unwrap()
}

pub fn reference_filterbank() -> FilterBank {
    FilterBank::diagonal(&[0.5, -0.5], &[1.0, 1.0]).unwrap()
}

/// `A = diag(0.5, -0.5)`, `B = [1; 1]`, `Ψ ≡ 1`, covariance above.
pub fn reference(grid_size: usize) -> NormalizedProblem {
    let grid = CircleGrid::new(grid_size).unwrap();
    let raw = RawProblem::new(
        reference_filterbank(),
        reference_sigma(),
        grid,
        &PriorSpec::constant(1.0),
    )
    .unwrap();
    normalize(&raw).unwrap()
}

fn white_gramian(fb: &FilterBank) -> HermitianMatrix {
    let bb = HermitianMatrix::outer(fb.b());
    discrete_lyapunov(fb.a(), &bb).unwrap()
}

/// Three real poles, covariance of unit white noise through the bank,
/// rational prior `|1 - 0.5 z^{-1}|^2 / |1 + 0.3 z^{-1}|^2`.
pub fn three_a(grid_size: usize) -> NormalizedProblem {
    let fb = FilterBank::diagonal(&[0.6, -0.3, 0.1], &[1.0, 1.0, 1.0]).unwrap();
    let sigma = white_gramian(&fb);
    let grid = CircleGrid::new(grid_size).unwrap();
    let prior = PriorSpec::Rational {
        num: vec![1.0, -0.5],
        den: vec![1.0, 0.3],
    };
    normalize(&RawProblem::new(fb, sigma, grid, &prior).unwrap()).unwrap()
}

/// Different poles, constant prior, covariance of an AR(1) process
/// `1 / |1 - 0.4 e^{-jθ}|^2` computed on a fine grid.
pub fn three_b(grid_size: usize) -> NormalizedProblem {
    let fb = FilterBank::diagonal(&[0.7, 0.2, -0.5], &[1.0, 1.0, 1.0]).unwrap();
    let fine = GridResponse::new(fb.clone(), CircleGrid::new(16384).unwrap());
    let ar: Vec<f64> = fine
        .grid()
        .nodes()
        .map(|t| 1.0 / (Complex64::new(1.0, 0.0) - Complex64::from_polar(0.4, -t)).norm_sqr())
        .collect();
    let sigma = gamma_apply(&fine, &ar).unwrap();
    let grid = CircleGrid::new(grid_size).unwrap();
    normalize(&RawProblem::new(fb, sigma, grid, &PriorSpec::constant(1.0)).unwrap()).unwrap()
}

pub fn four(grid_size: usize) -> NormalizedProblem {
    let fb = FilterBank::diagonal(&[0.5, -0.4, 0.3, -0.2], &[1.0, 1.0, 1.0, 1.0]).unwrap();
    let sigma = white_gramian(&fb);
    let grid = CircleGrid::new(grid_size).unwrap();
    let prior = PriorSpec::Rational {
        num: vec![1.0, 0.6],
        den: vec![1.0, -0.2],
    };
    normalize(&RawProblem::new(fb, sigma, grid, &prior).unwrap()).unwrap()
}

pub fn instance(n: usize, grid_size: usize) -> NormalizedProblem {
    match n {
        2 => reference(grid_size),
        3 => three_a(grid_size),
        4 => four(grid_size),
        _ => panic!("no instance for n = {n}"),
    }
}

pub fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn random_vector(rng: &mut impl Rng, n: usize) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| complex_gaussian(rng))
}

pub fn random_unit_vector(rng: &mut impl Rng, n: usize) -> DVector<Complex64> {
    let v = random_vector(rng, n);
    let norm = v.norm();
    v.unscale(norm)
}

/// Haar-distributed unitary from the QR factorization of a complex
/// Gaussian matrix, with the phases of `R`'s diagonal divided out.
pub fn random_unitary(rng: &mut impl Rng, n: usize) -> DMatrix<Complex64> {
    let z = DMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// `U diag(d) U*` for a random unitary `U`.
pub fn with_spectrum(rng: &mut impl Rng, d: &[f64]) -> HermitianMatrix {
    let n = d.len();
    let u = random_unitary(rng, n);
    let diag = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        d.iter().map(|&v| Complex64::new(v, 0.0)),
    ));
    HermitianMatrix::new(&u * diag * u.adjoint()).unwrap()
}

/// A positive definite unit-trace state with eigenvalues drawn uniformly
/// from `[0.05, 1]` before normalization.
pub fn random_interior_state(rng: &mut impl Rng, n: usize) -> StateMatrix {
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    StateMatrix::from_psd(with_spectrum(rng, &d)).unwrap()
}

/// A unit-trace state of the given rank; nonzero eigenvalues in
/// `[0.1, 1]` before normalization.
pub fn random_singular_state(rng: &mut impl Rng, n: usize, rank: usize) -> (StateMatrix, DMatrix<Complex64>) {
    let u = random_unitary(rng, n);
    let d: Vec<Complex64> = (0..n)
        .map(|i| {
            if i < rank {
                Complex64::new(rng.random_range(0.1..1.0), 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let m = &u * DMatrix::from_diagonal(&DVector::from_vec(d)) * u.adjoint();
    let state = StateMatrix::from_psd(HermitianMatrix::new(m).unwrap()).unwrap();
    let kernel = u.columns(rank, n - rank).into_owned();
    (state, kernel)
}

pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
    let z = DMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
    HermitianMatrix::new((&z + z.adjoint()) * Complex64::new(0.5, 0.0)).unwrap()
}

/// Relative sup-norm distance between two sampled spectra.
pub fn relative_sup(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
