//! Time evolution of a single excitation.
//!
//! All public time arguments are in units of `pi/J`; they are converted to
//! physical time (`1/J` with `hbar = 1`) through [`TimeGrid::time_unit`].
//! Integration is exact (eigenbasis) where possible and classical fixed-step
//! RK4 otherwise.

mod lindblad;

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, ComplexMatrix, SparseMatrix};
use crate::model::{build_real_hamiltonian, LatticeSpec, ModelError};
use crate::spectra::{self, SpectraError};

pub use lindblad::{evolve_lindblad, evolve_uniform_decay, DensityMatrix, LindbladSolver, Workspace, TRACE_TOLERANCE};

/// Default RK4 step, in units of `pi/J`.
pub const DEFAULT_DT: f64 = 1e-3;
/// Raw norm beyond which RK4 gives up.
pub const OVERFLOW_NORM: f64 = 1e6;
/// Largest allowed `dt * ||H||_inf` for RK4.
const MAX_STEP_SCALE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("time grid needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("time grid t_max must be positive and finite, got {0}")]
    BadTMax(f64),
    #[error("time unit must be positive and finite, got {0}")]
    BadTimeUnit(f64),
    #[error("state has {got} amplitudes, Hamiltonian acts on {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("initial state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("site {index} out of range for {sites} sites")]
    SiteOutOfRange { index: usize, sites: usize },
    #[error("step dt = {dt} (pi/J) too large: dt * ||H|| = {scale:.3} exceeds {limit}; use dt <= {suggested:e}")]
    StepTooLarge { dt: f64, scale: f64, limit: f64, suggested: f64 },
    #[error("norm overflow ({norm:e}) at t = {t} (pi/J)")]
    Overflow { t: f64, norm: f64 },
    #[error("trace drifted to {trace} at t = {t} (pi/J); reduce dt")]
    TraceDrift { t: f64, trace: f64 },
    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),
    #[error("combined dissipation and non-Hermitian hopping is not supported")]
    DissipationWithNonHermitian,
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Uniformly spaced output times `0, .., t_max` (units `pi/J`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    t_max: f64,
    samples: usize,
    time_unit: f64,
}

impl TimeGrid {
    /// Grid for coupling `J`; one display unit is `pi/J` of physical time.
    pub fn new(t_max: f64, samples: usize, coupling: f64) -> Result<Self, DynamicsError> {
        Self::with_time_unit(t_max, samples, PI / coupling)
    }

    /// Grid with an explicit physical duration per display unit.
    pub fn with_time_unit(t_max: f64, samples: usize, time_unit: f64) -> Result<Self, DynamicsError> {
        if samples < 2 {
            return Err(DynamicsError::TooFewSamples(samples));
        }
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(DynamicsError::BadTMax(t_max));
        }
        if !(time_unit.is_finite() && time_unit > 0.0) {
            return Err(DynamicsError::BadTimeUnit(time_unit));
        }
        Ok(Self { t_max, samples, time_unit })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn time_unit(&self) -> f64 {
        self.time_unit
    }

    /// Sample spacing in display units.
    pub fn spacing(&self) -> f64 {
        self.t_max / (self.samples - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_max * k as f64 / (self.samples - 1) as f64
    }

    /// Sample times in display units (`pi/J`).
    pub fn times(&self) -> Vec<f64> {
        (0..self.samples).map(|k| self.time(k)).collect()
    }

    /// Sample times in physical units.
    pub fn physical_times(&self) -> Vec<f64> {
        (0..self.samples).map(|k| self.time(k) * self.time_unit).collect()
    }
}

/// Single-excitation amplitudes in the cell-major site order.
#[derive(Clone, Debug, PartialEq)]
pub struct Wavefunction(Array1<C64>);

impl Wavefunction {
    /// Normalized amplitudes; rejects states off the unit sphere by > 1e-9.
    pub fn new(amplitudes: Array1<C64>) -> Result<Self, DynamicsError> {
        let n2: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if (n2 - 1.0).abs() > 1e-9 {
            return Err(DynamicsError::NotNormalized(n2));
        }
        Ok(Self(amplitudes))
    }

    pub fn single_site(sites: usize, index: usize) -> Result<Self, DynamicsError> {
        if index >= sites {
            return Err(DynamicsError::SiteOutOfRange { index, sites });
        }
        let mut a = Array1::zeros(sites);
        a[index] = C64::new(1.0, 0.0);
        Ok(Self(a))
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Hermitian eigenbasis propagation.
    Spectral,
    /// Right-eigenvector propagation of a non-Hermitian matrix.
    General,
    /// Fixed-step RK4 on the Schrodinger equation.
    Rk4,
    /// Fixed-step RK4 on the master equation.
    Lindblad,
    /// Closed-form solution for equal decay rates on every site.
    UniformDecay,
}

/// Sampled evolution. Rows of `populations` are samples, columns are lattice
/// sites. Non-Hermitian runs keep raw (unrenormalized) populations.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub populations: Array2<f64>,
    /// Sink population, open systems only.
    pub virtual_population: Option<Vec<f64>>,
    /// Sum of all populations (including the sink) per sample.
    pub norm: Vec<f64>,
    /// Amplitudes per sample, pure-state engines only.
    pub amplitudes: Option<Array2<C64>>,
    pub engine: Engine,
}

impl Trajectory {
    fn from_amplitudes(grid: TimeGrid, amplitudes: Array2<C64>, engine: Engine) -> Self {
        let populations = amplitudes.mapv(|z| z.norm_sqr());
        let norm = populations.rows().into_iter().map(|r| r.sum()).collect();
        Self { grid, populations, virtual_population: None, norm, amplitudes: Some(amplitudes), engine }
    }

    pub fn sites(&self) -> usize {
        self.populations.ncols()
    }

    pub fn samples(&self) -> usize {
        self.populations.nrows()
    }

    /// Lattice populations followed by the sink population, when present.
    pub fn full_populations(&self, sample: usize) -> Vec<f64> {
        let mut row = self.populations.row(sample).to_vec();
        if let Some(v) = &self.virtual_population {
            row.push(v[sample]);
        }
        row
    }
}

fn check_dims(h: &ComplexMatrix, psi0: &Wavefunction) -> Result<(), DynamicsError> {
    if !linalg::is_square(h) {
        return Err(SpectraError::NotSquare(h.nrows(), h.ncols()).into());
    }
    if psi0.len() != h.nrows() {
        return Err(DynamicsError::DimensionMismatch { expected: h.nrows(), got: psi0.len() });
    }
    Ok(())
}

/// `psi(t) = V exp(-i lambda t) V^dag psi0` for Hermitian `H`.
pub fn evolve_spectral(h: &ComplexMatrix, psi0: &Wavefunction, grid: &TimeGrid) -> Result<Trajectory, DynamicsError> {
    check_dims(h, psi0)?;
    let evd = spectra::eigendecompose_hermitian(h)?;
    let coeffs = linalg::dagger(&evd.vectors).dot(psi0.amplitudes());
    let amplitudes = propagate_in_eigenbasis(
        &evd.vectors,
        evd.values.iter().map(|&l| C64::new(l, 0.0)).collect(),
        &coeffs,
        grid,
    );
    Ok(Trajectory::from_amplitudes(grid.clone(), amplitudes, Engine::Spectral))
}

/// `psi(t) = V exp(-i lambda t) V^-1 psi0` for diagonalizable `H`.
pub fn evolve_general(h: &ComplexMatrix, psi0: &Wavefunction, grid: &TimeGrid) -> Result<Trajectory, DynamicsError> {
    check_dims(h, psi0)?;
    let evd = spectra::eigendecompose_general(h)?;
    let coeffs = evd.inverse.dot(psi0.amplitudes());
    let amplitudes = propagate_in_eigenbasis(&evd.vectors, evd.values.clone(), &coeffs, grid);
    Ok(Trajectory::from_amplitudes(grid.clone(), amplitudes, Engine::General))
}

fn propagate_in_eigenbasis(
    vectors: &ComplexMatrix,
    values: Vec<C64>,
    coeffs: &Array1<C64>,
    grid: &TimeGrid,
) -> Array2<C64> {
    let d = vectors.nrows();
    let mut out = Array2::zeros((grid.samples(), d));
    let mut phased = Array1::zeros(values.len());
    for (k, t) in grid.physical_times().into_iter().enumerate() {
        for ((p, &l), &c) in phased.iter_mut().zip(&values).zip(coeffs) {
            *p = (C64::new(0.0, -t) * l).exp() * c;
        }
        out.row_mut(k).assign(&vectors.dot(&phased));
    }
    out
}

/// Substeps per sample interval so the step does not exceed `dt_max`.
pub(crate) fn substeps(grid: &TimeGrid, dt_max: f64) -> usize {
    let ratio = grid.spacing() / dt_max;
    // tolerate rounding when dt divides the spacing exactly
    (ratio - 1e-9).ceil().max(1.0) as usize
}

pub(crate) fn check_step(dt: f64, grid: &TimeGrid, operator_scale: f64) -> Result<(), DynamicsError> {
    let scale = dt * grid.time_unit() * operator_scale;
    if !(dt.is_finite() && dt > 0.0) || scale > MAX_STEP_SCALE {
        let suggested = if operator_scale > 0.0 { MAX_STEP_SCALE / (grid.time_unit() * operator_scale) } else { dt };
        return Err(DynamicsError::StepTooLarge { dt, scale, limit: MAX_STEP_SCALE, suggested });
    }
    Ok(())
}

/// Classical RK4 on `i dpsi/dt = H psi` with a step no larger than `dt`
/// (units `pi/J`). Each sample interval is split into equal substeps, so a
/// `dt` that divides the spacing is used exactly. Non-Hermitian `H` is
/// allowed; the raw norm is recorded.
pub fn evolve_rk4(h: &ComplexMatrix, psi0: &Wavefunction, grid: &TimeGrid, dt: f64) -> Result<Trajectory, DynamicsError> {
    check_dims(h, psi0)?;
    check_step(dt, grid, linalg::inf_norm(h))?;
    let sparse = SparseMatrix::from_dense(h);
    let d = h.nrows();
    let n_sub = substeps(grid, dt);
    let step = grid.spacing() * grid.time_unit() / n_sub as f64;
    let minus_i = C64::new(0.0, -1.0);

    let mut psi = psi0.amplitudes().clone();
    let mut out = Array2::zeros((grid.samples(), d));
    out.row_mut(0).assign(&psi);
    let (mut k1, mut k2, mut k3, mut k4) = (Array1::zeros(d), Array1::zeros(d), Array1::zeros(d), Array1::zeros(d));
    let mut tmp = Array1::zeros(d);

    for sample in 1..grid.samples() {
        for _ in 0..n_sub {
            sparse.mul_vec_into(psi.view(), &mut k1);
            k1.mapv_inplace(|z| z * minus_i);
            tmp.assign(&psi);
            tmp.scaled_add(C64::new(0.5 * step, 0.0), &k1);
            sparse.mul_vec_into(tmp.view(), &mut k2);
            k2.mapv_inplace(|z| z * minus_i);
            tmp.assign(&psi);
            tmp.scaled_add(C64::new(0.5 * step, 0.0), &k2);
            sparse.mul_vec_into(tmp.view(), &mut k3);
            k3.mapv_inplace(|z| z * minus_i);
            tmp.assign(&psi);
            tmp.scaled_add(C64::new(step, 0.0), &k3);
            sparse.mul_vec_into(tmp.view(), &mut k4);
            k4.mapv_inplace(|z| z * minus_i);
            let w = step / 6.0;
            for i in 0..d {
                psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * w;
            }
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > OVERFLOW_NORM {
            return Err(DynamicsError::Overflow { t: grid.time(sample), norm });
        }
        out.row_mut(sample).assign(&psi);
    }
    Ok(Trajectory::from_amplitudes(grid.clone(), out, Engine::Rk4))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LindbladEngine {
    /// Full master-equation RK4.
    #[default]
    Full,
    /// Closed-form factorization (valid because every site decays at `gamma`).
    UniformDecay,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EngineOptions {
    /// RK4 step bound in units of `pi/J`.
    pub dt: f64,
    pub lindblad: LindbladEngine,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, lindblad: LindbladEngine::Full }
    }
}

/// Evolve `psi0` under `spec`, choosing the engine from the physics:
/// spectral for closed Hermitian runs, master equation when `gamma > 0`,
/// eigenbasis (with RK4 fallback) for non-Hermitian hopping.
pub fn simulate(
    spec: &LatticeSpec,
    psi0: &Wavefunction,
    grid: &TimeGrid,
    options: &EngineOptions,
) -> Result<Trajectory, DynamicsError> {
    let h = build_real_hamiltonian(spec)?;
    if spec.gamma_diss() > 0.0 {
        if !spec.is_hermitian() {
            return Err(DynamicsError::DissipationWithNonHermitian);
        }
        return match options.lindblad {
            LindbladEngine::Full => {
                let rho0 = DensityMatrix::from_pure(psi0);
                evolve_lindblad(&h, spec.gamma_diss(), &rho0, grid, options.dt)
            }
            LindbladEngine::UniformDecay => evolve_uniform_decay(&h, spec.gamma_diss(), psi0, grid),
        };
    }
    if spec.is_hermitian() {
        return evolve_spectral(&h, psi0, grid);
    }
    match evolve_general(&h, psi0, grid) {
        Err(DynamicsError::Spectra(SpectraError::IllConditioned { .. })) => evolve_rk4(&h, psi0, grid, options.dt),
        other => other,
    }
}
