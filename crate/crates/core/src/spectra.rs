//! Band structure, flat-band verification over the Brillouin zone, and dense
//! eigendecompositions for the propagators.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, ComplexMatrix};
use crate::model::{build_bloch_hamiltonian, FluxConfig};

/// Default Brillouin-zone sampling.
pub const DEFAULT_K_POINTS: usize = 201;

/// Hermiticity tolerance, relative to the Frobenius norm.
const HERMITIAN_TOL: f64 = 1e-9;
/// Reconstruction tolerance for the general solver, relative to the norm.
const GENERAL_RECONSTRUCTION_TOL: f64 = 1e-8;
/// `||V|| ||V^-1||` beyond this is treated as a defective basis.
const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("matrix is not square ({0} x {1})")]
    NotSquare(usize, usize),
    #[error("matrix is not Hermitian: max |H - H^dag| = {defect:e} exceeds {limit:e}")]
    NotHermitian { defect: f64, limit: f64 },
    #[error("eigensolver did not converge")]
    NoConvergence,
    #[error("eigenbasis is ill-conditioned (condition ~ {condition:e}, reconstruction residual {residual:e})")]
    IllConditioned { condition: f64, residual: f64 },
    #[error("band structure needs at least 2 k-points, got {0}")]
    TooFewKPoints(usize),
    #[error("top band deviates from the closed-form dispersion by {deviation:e} at k = {k}")]
    DispersionMismatch { k: f64, deviation: f64 },
}

/// `V diag(lambda) V^dag` with real `lambda` (ascending) and unitary `V`.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let scaled = scale_columns(&self.vectors, self.values.iter().map(|&l| C64::new(l, 0.0)));
        scaled.dot(&linalg::dagger(&self.vectors))
    }
}

/// `V diag(lambda) V^-1` for a diagonalizable (not necessarily normal) matrix.
#[derive(Clone, Debug)]
pub struct GeneralEigen {
    pub values: Vec<C64>,
    pub vectors: ComplexMatrix,
    pub inverse: ComplexMatrix,
}

impl GeneralEigen {
    pub fn reconstruct(&self) -> ComplexMatrix {
        scale_columns(&self.vectors, self.values.iter().copied()).dot(&self.inverse)
    }
}

fn scale_columns(m: &ComplexMatrix, factors: impl Iterator<Item = C64>) -> ComplexMatrix {
    let mut out = m.clone();
    for (mut col, f) in out.columns_mut().into_iter().zip(factors) {
        col.mapv_inplace(|z| z * f);
    }
    out
}

pub fn eigendecompose_hermitian(h: &ComplexMatrix) -> Result<HermitianEigen, SpectraError> {
    if !linalg::is_square(h) {
        return Err(SpectraError::NotSquare(h.nrows(), h.ncols()));
    }
    let limit = HERMITIAN_TOL * linalg::frobenius_norm(h);
    let defect = linalg::hermiticity_defect(h);
    if defect > limit {
        return Err(SpectraError::NotHermitian { defect, limit });
    }
    if h.nrows() == 0 {
        return Ok(HermitianEigen { values: vec![], vectors: ComplexMatrix::zeros((0, 0)) });
    }
    let evd = linalg::to_faer(h)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| SpectraError::NoConvergence)?;
    let s = evd.S();
    let values = (0..h.nrows()).map(|i| s[i].re).collect();
    Ok(HermitianEigen { values, vectors: linalg::from_faer(evd.U()) })
}

pub fn eigendecompose_general(h: &ComplexMatrix) -> Result<GeneralEigen, SpectraError> {
    if !linalg::is_square(h) {
        return Err(SpectraError::NotSquare(h.nrows(), h.ncols()));
    }
    let n = h.nrows();
    if n == 0 {
        let empty = ComplexMatrix::zeros((0, 0));
        return Ok(GeneralEigen { values: vec![], vectors: empty.clone(), inverse: empty });
    }
    let evd = linalg::to_faer(h).eigen().map_err(|_| SpectraError::NoConvergence)?;
    let s = evd.S();
    let values: Vec<C64> = (0..n).map(|i| s[i]).collect();
    let u = evd.U();
    let inverse = faer::linalg::solvers::DenseSolveCore::inverse(&u.partial_piv_lu());
    let decomposition = GeneralEigen {
        values,
        vectors: linalg::from_faer(u),
        inverse: linalg::from_faer(inverse.as_ref()),
    };

    let scale = linalg::frobenius_norm(h);
    let residual = linalg::frobenius_norm(&(&decomposition.reconstruct() - h));
    let condition =
        linalg::frobenius_norm(&decomposition.vectors) * linalg::frobenius_norm(&decomposition.inverse) / n as f64;
    let tolerance = GENERAL_RECONSTRUCTION_TOL * scale.max(f64::MIN_POSITIVE);
    if !residual.is_finite() || !condition.is_finite() || residual > tolerance || condition > MAX_CONDITION {
        return Err(SpectraError::IllConditioned { condition, residual });
    }
    Ok(decomposition)
}

/// Closed-form top band `E_k = sqrt(sum_i 2 J^2 (1 + cos phi_i cos k + sin phi_i sin k))`.
pub fn dispersion(flux: &FluxConfig, coupling: f64, k: f64) -> f64 {
    let (ck, sk) = (k.cos(), k.sin());
    let radicand: f64 = flux
        .phases()
        .iter()
        .map(|&phi| 2.0 * coupling * coupling * (1.0 + phi.cos() * ck + phi.sin() * sk))
        .sum();
    // each term is >= 0 analytically; clamp rounding noise
    radicand.max(0.0).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct BandStructure {
    pub k_grid: Vec<f64>,
    /// Per-k ascending eigenvalues, `N + 1` each.
    pub energies: Vec<Vec<f64>>,
    /// `max_k E_top - min_k E_top`
    pub flatness: f64,
}

impl BandStructure {
    pub fn top_band(&self) -> impl Iterator<Item = f64> + '_ {
        self.energies.iter().map(|e| *e.last().expect("bands are non-empty"))
    }
}

/// Uniform grid of `points` momenta covering `[-pi, pi]` inclusive.
pub fn k_grid(points: usize) -> Vec<f64> {
    let step = 2.0 * PI / (points - 1) as f64;
    (0..points).map(|i| -PI + step * i as f64).collect()
}

/// Diagonalize the Bloch Hamiltonian on a uniform grid, check the top band
/// against [`dispersion`] to `1e-10 J`, and report its flatness.
pub fn band_structure(flux: &FluxConfig, coupling: f64, k_points: usize) -> Result<BandStructure, SpectraError> {
    if k_points < 2 {
        return Err(SpectraError::TooFewKPoints(k_points));
    }
    let k_grid = k_grid(k_points);
    let mut energies = Vec::with_capacity(k_points);
    for &k in &k_grid {
        let evd = eigendecompose_hermitian(&build_bloch_hamiltonian(flux, k, coupling))?;
        let top = *evd.values.last().expect("Bloch matrix is at least 2x2");
        let deviation = (top - dispersion(flux, coupling, k)).abs();
        if deviation > 1e-10 * coupling {
            return Err(SpectraError::DispersionMismatch { k, deviation });
        }
        energies.push(evd.values);
    }
    let (lo, hi) = energies
        .iter()
        .map(|e| *e.last().unwrap())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));
    Ok(BandStructure { k_grid, energies, flatness: hi - lo })
}
