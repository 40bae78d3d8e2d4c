//! Problem instances: prior spectrum, steady-state covariance, normalization
//! to `∫Ψ = 1, Σ = I`, the feasibility test, the moment operator
//! `Γ(Φ) = ∫ G Φ G*` and the orthogonal complement of its range.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::{weighted_outer_sum, CircleGrid, FilterBank, GridResponse};
use crate::linalg::{pd_inv_sqrt, psd_sqrt, trace_inner, HermitianMatrix};

/// Relative residual below which the covariance is declared feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Relative singular value cutoff for the nullspace defining
/// `(Range Γ)^⊥`.
pub const NULLSPACE_TOL: f64 = 1e-9;

/// The covariance must have every eigenvalue above this floor.
pub const SIGMA_PD_FLOOR: f64 = 1e-10;

/// How a prior density is specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PriorSpec {
    /// A constant density.
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// One value per grid node.
    Samples { values: Vec<f64> },
    /// `|num(e^{jθ})|^2 / |den(e^{jθ})|^2`, polynomials in `z^{-1}` given
    /// by ascending coefficients.
    Rational { num: Vec<f64>, den: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

/// `Σ_k c_k e^{-jkθ}`.
fn poly_at(coeffs: &[f64], theta: f64) -> Complex64 {
    let zinv = Complex64::from_polar(1.0, -theta);
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * zinv + c)
}

impl PriorSpec {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    /// Samples the density on `grid`, checking strict positivity.
    pub fn sample(&self, grid: &CircleGrid) -> Result<Vec<f64>> {
        let values = match self {
            Self::Constant { value } => vec![*value; grid.size()],
            Self::Samples { values } => {
                if values.len() != grid.size() {
                    return Err(Error::LengthMismatch {
                        expected: grid.size(),
                        got: values.len(),
                    });
                }
                values.clone()
            }
            Self::Rational { num, den } => {
                if num.is_empty() || den.is_empty() {
                    return Err(Error::NonFinite("rational prior coefficients"));
                }
                let fine = grid.size() * 8;
                let step = 2.0 * std::f64::consts::PI / fine as f64;
                let min_den = (0..fine)
                    .map(|k| poly_at(den, -std::f64::consts::PI + step * k as f64).norm_sqr())
                    .fold(f64::INFINITY, f64::min);
                if !(min_den > 1e-8) {
                    return Err(Error::DenominatorNotZeroFree(min_den));
                }
                grid.nodes()
                    .map(|t| poly_at(num, t).norm_sqr() / poly_at(den, t).norm_sqr())
                    .collect()
            }
        };
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("prior spectrum"));
            }
            if v <= 0.0 {
                return Err(Error::NonpositivePrior(k));
            }
        }
        Ok(values)
    }
}

/// A strictly positive prior density with unit mass on its grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpectrum {
    grid: CircleGrid,
    psi: Vec<f64>,
}

impl PriorSpectrum {
    /// Normalizes `raw` to unit mass and returns it with the original mass.
    pub fn normalized(grid: CircleGrid, raw: &[f64]) -> Result<(Self, f64)> {
        if raw.len() != grid.size() {
            return Err(Error::LengthMismatch {
                expected: grid.size(),
                got: raw.len(),
            });
        }
        if let Some(k) = raw.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::NonpositivePrior(k));
        }
        let mass = crate::filterbank::integrate_scalar(&grid, raw)?;
        let psi = if mass == 1.0 {
            raw.to_vec()
        } else {
            raw.iter().map(|v| v / mass).collect()
        };
        Ok((Self { grid, psi }, mass))
    }

    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.psi
    }
}

/// Problem data before normalization.
#[derive(Clone, Debug)]
pub struct RawProblem {
    filterbank: FilterBank,
    sigma: HermitianMatrix,
    grid: CircleGrid,
    psi_raw: Vec<f64>,
}

impl RawProblem {
    pub fn new(
        filterbank: FilterBank,
        sigma: HermitianMatrix,
        grid: CircleGrid,
        prior: &PriorSpec,
    ) -> Result<Self> {
        if sigma.dim() != filterbank.dim() {
            return Err(Error::DimensionMismatch {
                expected: filterbank.dim(),
                got: sigma.dim(),
            });
        }
        let min = sigma.min_eigenvalue();
        if !(min > SIGMA_PD_FLOOR) {
            return Err(Error::SigmaNotPositiveDefinite(min));
        }
        let psi_raw = prior.sample(&grid)?;
        Ok(Self {
            filterbank,
            sigma,
            grid,
            psi_raw,
        })
    }

    pub fn filterbank(&self) -> &FilterBank {
        &self.filterbank
    }

    pub fn sigma(&self) -> &HermitianMatrix {
        &self.sigma
    }

    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }

    pub fn psi_raw(&self) -> &[f64] {
        &self.psi_raw
    }
}

/// Records how a normalized instance maps back to the raw one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `c = ∫Ψ_raw`.
    pub mass: f64,
    /// `Σ_c^{-1/2}` with `Σ_c = Σ / c`.
    pub whitening: HermitianMatrix,
    /// `Σ_c^{1/2}`.
    pub coloring: HermitianMatrix,
}

/// A problem with `∫Ψ = 1` and `Σ = I`, sampled on a fixed grid.
#[derive(Clone, Debug)]
pub struct NormalizedProblem {
    response: GridResponse,
    prior: PriorSpectrum,
    provenance: Provenance,
}

impl NormalizedProblem {
    /// An instance whose covariance is already the identity.
    pub fn new(filterbank: FilterBank, grid: CircleGrid, prior: &PriorSpec) -> Result<Self> {
        let n = filterbank.dim();
        normalize(&RawProblem::new(
            filterbank,
            HermitianMatrix::identity(n),
            grid,
            prior,
        )?)
    }

    pub fn response(&self) -> &GridResponse {
        &self.response
    }

    pub fn prior(&self) -> &PriorSpectrum {
        &self.prior
    }

    pub fn psi(&self) -> &[f64] {
        self.prior.values()
    }

    pub fn grid(&self) -> &CircleGrid {
        self.response.grid()
    }

    pub fn filterbank(&self) -> &FilterBank {
        self.response.filterbank()
    }

    pub fn dim(&self) -> usize {
        self.response.dim()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The same normalized constraint set with a different prior, rescaled
    /// to unit mass. Provenance still refers to the original instance.
    pub fn with_prior(&self, prior: &PriorSpec) -> Result<Self> {
        let raw = prior.sample(self.grid())?;
        let (prior, _) = PriorSpectrum::normalized(*self.grid(), &raw)?;
        Ok(Self {
            response: self.response.clone(),
            prior,
            provenance: self.provenance.clone(),
        })
    }

    /// Maps a density of the normalized problem back to the raw scale,
    /// `Φ = c Φ'`.
    pub fn denormalize_phi(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter().map(|v| v * self.provenance.mass).collect()
    }

    /// Multiplier in raw coordinates, `Σ_c^{-1/2} Λ Σ_c^{-1/2}`, so that the
    /// raw optimum is `Ψ_raw / (G* Λ_raw G)`.
    pub fn denormalize_lambda(&self, lambda: &HermitianMatrix) -> HermitianMatrix {
        lambda.congruence(&self.provenance.whitening)
    }
}

/// Rescales the prior to unit mass and whitens the filter bank so that the
/// covariance becomes the identity.
pub fn normalize(raw: &RawProblem) -> Result<NormalizedProblem> {
    let (prior, mass) = PriorSpectrum::normalized(raw.grid, &raw.psi_raw)?;
    let n = raw.filterbank.dim();
    let sigma_c = raw.sigma.scale(1.0 / mass);
    let (whitening, coloring, filterbank) = if sigma_c == HermitianMatrix::identity(n) {
        (
            HermitianMatrix::identity(n),
            HermitianMatrix::identity(n),
            raw.filterbank.clone(),
        )
    } else {
        let min = sigma_c.min_eigenvalue();
        if !(min > SIGMA_PD_FLOOR) {
            return Err(Error::SigmaNotPositiveDefinite(min));
        }
        let whitening = pd_inv_sqrt(&sigma_c, SIGMA_PD_FLOOR)
            .map_err(|_| Error::SigmaNotPositiveDefinite(min))?;
        let coloring = psd_sqrt(&sigma_c)?;
        let a = whitening.as_matrix() * raw.filterbank.a() * coloring.as_matrix();
        let b = whitening.as_matrix() * raw.filterbank.b();
        // Similarity preserves both properties; re-checked numerically.
        let fb = FilterBank::new(a, b)?;
        (whitening, coloring, fb)
    };
    Ok(NormalizedProblem {
        response: GridResponse::new(filterbank, raw.grid),
        prior,
        provenance: Provenance {
            mass,
            whitening,
            coloring,
        },
    })
}

/// Outcome of the feasibility test `Σ - AΣA* = BH + H*B*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Least-squares certificate `H` (a 1 x n row).
    pub h: Vec<Complex64>,
    /// `||Σ - AΣA* - BH - H*B*||_F` at the certificate.
    pub residual: f64,
    /// Absolute threshold the residual was compared against.
    pub threshold: f64,
}

pub fn check_feasibility(fb: &FilterBank, sigma: &HermitianMatrix) -> Result<FeasibilityReport> {
    check_feasibility_with_tol(fb, sigma, FEASIBILITY_TOL)
}

/// Solves the real-linear least-squares problem for `H` and reports the
/// residual against `rel_tol * max(1, ||Σ - AΣA*||_F)`.
pub fn check_feasibility_with_tol(
    fb: &FilterBank,
    sigma: &HermitianMatrix,
    rel_tol: f64,
) -> Result<FeasibilityReport> {
    let n = fb.dim();
    if sigma.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.dim(),
        });
    }
    let a = fb.a();
    let target = HermitianMatrix::hermitize(sigma.as_matrix() - a * sigma.as_matrix() * a.adjoint());
    let t = target.to_real_coords();

    // Columns: images of Re h_j and Im h_j under H -> BH + H*B*.
    let apply = |h: &DVector<Complex64>| -> HermitianMatrix {
        let bh = fb.b() * h.transpose();
        HermitianMatrix::hermitize(&bh + bh.adjoint())
    };
    let mut design = DMatrix::<f64>::zeros(n * n, 2 * n);
    for j in 0..n {
        for (part, unit) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]
            .into_iter()
            .enumerate()
        {
            let mut h = DVector::<Complex64>::zeros(n);
            h[j] = unit;
            design.set_column(2 * j + part, &apply(&h).to_real_coords());
        }
    }
    let svd = design.clone().svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    let x = svd
        .solve(&t, cutoff)
        .map_err(|_| Error::NonFinite("feasibility least squares"))?;
    let h = DVector::from_fn(n, |j, _| Complex64::new(x[2 * j], x[2 * j + 1]));
    let residual = (&target - &apply(&h)).frobenius_norm();
    let threshold = rel_tol * target.frobenius_norm().max(1.0);
    Ok(FeasibilityReport {
        feasible: residual <= threshold,
        h: h.iter().copied().collect(),
        residual,
        threshold,
    })
}

/// `Γ(φ) = ∫ G φ G*` on the response grid.
pub fn gamma_apply(resp: &GridResponse, phi: &[f64]) -> Result<HermitianMatrix> {
    if phi.len() != resp.grid().size() {
        return Err(Error::LengthMismatch {
            expected: resp.grid().size(),
            got: phi.len(),
        });
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density samples"));
    }
    Ok(weighted_outer_sum(resp.grid(), resp.samples(), phi))
}

fn nullspace_on_grid(resp: &GridResponse) -> Vec<HermitianMatrix> {
    let n = resp.dim();
    let dim = n * n;
    let basis: Vec<HermitianMatrix> = (0..dim)
        .map(|b| {
            let mut e = vec![0.0; dim];
            e[b] = 1.0;
            HermitianMatrix::from_real_coords(n, &e).expect("coordinate count matches")
        })
        .collect();
    let rows = resp.grid().size();
    let mut map = DMatrix::<f64>::zeros(rows, dim);
    for (b, e) in basis.iter().enumerate() {
        for (k, g) in resp.samples().iter().enumerate() {
            map[(k, b)] = e.quadratic_form(g);
        }
    }
    let svd = map.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let largest = svd.singular_values.max();
    let mut out = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= NULLSPACE_TOL * largest {
            let mut coords: Vec<f64> = v_t.row(i).iter().copied().collect();
            // Fix the sign so the basis is reproducible.
            if let Some(&lead) = coords.iter().find(|c| c.abs() > 1e-12) {
                if lead < 0.0 {
                    coords.iter_mut().for_each(|c| *c = -*c);
                }
            }
            out.push(HermitianMatrix::from_real_coords(n, &coords).expect("coordinate count matches"));
        }
    }
    out
}

/// Orthonormal basis of `(Range Γ)^⊥ = {X : G*XG ≡ 0}`, computed as a
/// numerical nullspace and cross-checked on a grid of twice the size.
pub fn range_gamma_perp_basis(resp: &GridResponse) -> Result<Vec<HermitianMatrix>> {
    let coarse = nullspace_on_grid(resp);
    let fine = nullspace_on_grid(&resp.refined());
    if coarse.len() != fine.len() {
        return Err(Error::GridDependentNullspace {
            coarse: coarse.len(),
            fine: fine.len(),
        });
    }
    Ok(coarse)
}

/// Orthogonal decomposition `ℍ_n = Range Γ ⊕ (Range Γ)^⊥`.
#[derive(Clone, Debug)]
pub struct RangeGammaSplit {
    perp: Vec<HermitianMatrix>,
}

impl RangeGammaSplit {
    pub fn new(resp: &GridResponse) -> Result<Self> {
        Ok(Self {
            perp: range_gamma_perp_basis(resp)?,
        })
    }

    pub fn from_basis(perp: Vec<HermitianMatrix>) -> Self {
        Self { perp }
    }

    pub fn perp_basis(&self) -> &[HermitianMatrix] {
        &self.perp
    }

    /// Component of `x` in `(Range Γ)^⊥`.
    pub fn perp_component(&self, x: &HermitianMatrix) -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(x.dim());
        for b in &self.perp {
            let c = trace_inner(x, b).expect("basis matches dimension");
            acc = &acc + &b.scale(c);
        }
        acc
    }

    /// Component of `x` in `Range Γ`.
    pub fn range_component(&self, x: &HermitianMatrix) -> HermitianMatrix {
        x - &self.perp_component(x)
    }
}

/// `KL(Φ‖Ψ) = ∫ Ψ log(Ψ/Φ)`.
pub fn kl_divergence(prior: &PriorSpectrum, phi: &[f64]) -> Result<f64> {
    let psi = prior.values();
    if phi.len() != psi.len() {
        return Err(Error::LengthMismatch {
            expected: psi.len(),
            got: phi.len(),
        });
    }
    if let Some(k) = phi.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonpositivePhi(k));
    }
    let terms: Vec<f64> = psi.iter().zip(phi).map(|(p, f)| p * (p / f).ln()).collect();
    crate::filterbank::integrate_scalar(prior.grid(), &terms)
}
