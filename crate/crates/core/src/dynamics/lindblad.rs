//! Master-equation evolution with on-site loss into a sink.
//!
//! The sink `|v>` is appended after the lattice sites, so density matrices
//! are `(D + 1) x (D + 1)` with the sink at index `D`. Each site `k` decays
//! into the sink through the jump `sqrt(gamma_k) |v><k|`.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use super::{check_dims, check_step, substeps, DynamicsError, Engine, TimeGrid, Trajectory, Wavefunction};
use crate::linalg::{self, ComplexMatrix, SparseMatrix};
use crate::spectra::SpectraError;

/// Largest tolerated `|tr(rho) - 1|` before integration is abandoned.
pub const TRACE_TOLERANCE: f64 = 1e-4;

/// Density matrix on the lattice plus sink.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Rejects non-square, non-Hermitian (> 1e-9) or non-unit-trace (> 1e-9) input.
    pub fn new(matrix: ComplexMatrix) -> Result<Self, DynamicsError> {
        if !linalg::is_square(&matrix) || matrix.nrows() < 2 {
            return Err(DynamicsError::InvalidDensityMatrix(format!("shape {:?}", matrix.dim())));
        }
        let defect = linalg::hermiticity_defect(&matrix);
        if defect > 1e-9 {
            return Err(DynamicsError::InvalidDensityMatrix(format!("hermiticity defect {defect:e}")));
        }
        let trace: f64 = matrix.diag().iter().map(|z| z.re).sum();
        if (trace - 1.0).abs() > 1e-9 {
            return Err(DynamicsError::InvalidDensityMatrix(format!("trace {trace}")));
        }
        Ok(Self(matrix))
    }

    /// `|psi><psi|` with an empty sink.
    pub fn from_pure(psi: &Wavefunction) -> Self {
        let d = psi.len();
        let a = psi.amplitudes();
        let mut m = ComplexMatrix::zeros((d + 1, d + 1));
        for i in 0..d {
            for j in 0..d {
                m[[i, j]] = a[i] * a[j].conj();
            }
        }
        Self(m)
    }

    /// All population in the sink.
    pub fn virtual_state(sites: usize) -> Self {
        let mut m = ComplexMatrix::zeros((sites + 1, sites + 1));
        m[[sites, sites]] = C64::new(1.0, 0.0);
        Self(m)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    /// Number of lattice sites (excluding the sink).
    pub fn sites(&self) -> usize {
        self.0.nrows() - 1
    }

    pub fn trace(&self) -> f64 {
        self.0.diag().iter().map(|z| z.re).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.0.diag().iter().map(|z| z.re).collect()
    }
}

/// Right-hand side and RK4 stepper of the master equation.
#[derive(Clone, Debug)]
pub struct LindbladSolver {
    h: SparseMatrix,
    rates: Vec<f64>,
    scale: f64,
}

impl LindbladSolver {
    /// `h` is the Hermitian lattice Hamiltonian, `rates[k]` the loss rate of site `k`.
    pub fn new(h: &ComplexMatrix, rates: Vec<f64>) -> Result<Self, DynamicsError> {
        if !linalg::is_square(h) {
            return Err(SpectraError::NotSquare(h.nrows(), h.ncols()).into());
        }
        let defect = linalg::hermiticity_defect(h);
        let limit = 1e-9 * linalg::frobenius_norm(h).max(1.0);
        if defect > limit {
            return Err(SpectraError::NotHermitian { defect, limit }.into());
        }
        if rates.len() != h.nrows() {
            return Err(DynamicsError::DimensionMismatch { expected: h.nrows(), got: rates.len() });
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(DynamicsError::InvalidDensityMatrix("loss rates must be finite and >= 0".into()));
        }
        let scale = linalg::inf_norm(h) + rates.iter().cloned().fold(0.0, f64::max);
        Ok(Self { h: SparseMatrix::from_dense(h), rates, scale })
    }

    pub fn uniform(h: &ComplexMatrix, gamma: f64) -> Result<Self, DynamicsError> {
        Self::new(h, vec![gamma; h.nrows()])
    }

    pub fn sites(&self) -> usize {
        self.h.dim()
    }

    /// Bound on the generator used for the step-size check.
    pub fn operator_scale(&self) -> f64 {
        self.scale
    }

    /// `out = L(rho)`. `rho` must be Hermitian; the result is Hermitian by
    /// construction since `-i[H, rho] = -i(H rho - (H rho)^dag)`.
    pub fn rhs_into(&self, rho: &ComplexMatrix, hr: &mut ComplexMatrix, out: &mut ComplexMatrix) {
        let d = self.sites();
        let m = d + 1;
        hr.fill(C64::new(0.0, 0.0));
        for (i, k, h) in self.h.entries() {
            for j in 0..m {
                hr[[i, j]] += h * rho[[k, j]];
            }
        }
        let minus_i = C64::new(0.0, -1.0);
        for i in 0..m {
            for j in 0..m {
                out[[i, j]] = minus_i * (hr[[i, j]] - hr[[j, i]].conj());
            }
        }
        let mut gain = 0.0;
        for i in 0..d {
            let ri = 0.5 * self.rates[i];
            gain += self.rates[i] * rho[[i, i]].re;
            for j in 0..m {
                out[[i, j]] -= rho[[i, j]] * ri;
                out[[j, i]] -= rho[[j, i]] * ri;
            }
        }
        out[[d, d]] += C64::new(gain, 0.0);
    }

    /// One classical RK4 step of physical length `step`.
    pub fn rk4_step(&self, rho: &mut ComplexMatrix, step: f64, work: &mut Workspace) {
        let Workspace { hr, k1, k2, k3, k4, tmp } = work;
        let half = C64::new(0.5 * step, 0.0);
        self.rhs_into(rho, hr, k1);
        tmp.assign(rho);
        tmp.scaled_add(half, k1);
        self.rhs_into(tmp, hr, k2);
        tmp.assign(rho);
        tmp.scaled_add(half, k2);
        self.rhs_into(tmp, hr, k3);
        tmp.assign(rho);
        tmp.scaled_add(C64::new(step, 0.0), k3);
        self.rhs_into(tmp, hr, k4);
        let w = step / 6.0;
        ndarray::Zip::from(rho)
            .and(&*k1)
            .and(&*k2)
            .and(&*k3)
            .and(&*k4)
            .for_each(|r, &a, &b, &c, &e| *r += (a + (b + c) * 2.0 + e) * w);
    }

    /// Integrate from `rho0` with step no larger than `dt` (units `pi/J`),
    /// invoking `observe(sample, rho)` at every grid point.
    pub fn integrate(
        &self,
        rho0: &DensityMatrix,
        grid: &TimeGrid,
        dt: f64,
        mut observe: impl FnMut(usize, &ComplexMatrix),
    ) -> Result<DensityMatrix, DynamicsError> {
        if rho0.sites() != self.sites() {
            return Err(DynamicsError::DimensionMismatch { expected: self.sites() + 1, got: rho0.sites() + 1 });
        }
        check_step(dt, grid, self.scale)?;
        let n_sub = substeps(grid, dt);
        let step = grid.spacing() * grid.time_unit() / n_sub as f64;
        let mut rho = rho0.matrix().clone();
        let mut work = Workspace::new(self.sites() + 1);
        observe(0, &rho);
        for sample in 1..grid.samples() {
            for _ in 0..n_sub {
                self.rk4_step(&mut rho, step, &mut work);
            }
            let trace: f64 = rho.diag().iter().map(|z| z.re).sum();
            if !trace.is_finite() || (trace - 1.0).abs() > TRACE_TOLERANCE {
                return Err(DynamicsError::TraceDrift { t: grid.time(sample), trace });
            }
            observe(sample, &rho);
        }
        Ok(DensityMatrix(rho))
    }
}

/// Scratch buffers for [`LindbladSolver::rk4_step`].
#[derive(Clone, Debug)]
pub struct Workspace {
    hr: ComplexMatrix,
    k1: ComplexMatrix,
    k2: ComplexMatrix,
    k3: ComplexMatrix,
    k4: ComplexMatrix,
    tmp: ComplexMatrix,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        let z = || ComplexMatrix::zeros((dim, dim));
        Self { hr: z(), k1: z(), k2: z(), k3: z(), k4: z(), tmp: z() }
    }
}

/// Full master-equation evolution with equal loss `gamma` on every site.
pub fn evolve_lindblad(
    h: &ComplexMatrix,
    gamma: f64,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    let solver = LindbladSolver::uniform(h, gamma)?;
    let d = solver.sites();
    let mut populations = Array2::zeros((grid.samples(), d));
    let mut sink = vec![0.0; grid.samples()];
    let mut norm = vec![0.0; grid.samples()];
    solver.integrate(rho0, grid, dt, |k, rho| {
        for i in 0..d {
            populations[[k, i]] = rho[[i, i]].re;
        }
        sink[k] = rho[[d, d]].re;
        norm[k] = rho.diag().iter().map(|z| z.re).sum();
    })?;
    Ok(Trajectory {
        grid: grid.clone(),
        populations,
        virtual_population: Some(sink),
        norm,
        amplitudes: None,
        engine: Engine::Lindblad,
    })
}

/// Closed form for equal loss on every site starting from a pure lattice
/// state: the lattice block is `exp(-gamma t) U rho0 U^dag` and the sink
/// holds `1 - exp(-gamma t)`.
pub fn evolve_uniform_decay(
    h: &ComplexMatrix,
    gamma: f64,
    psi0: &Wavefunction,
    grid: &TimeGrid,
) -> Result<Trajectory, DynamicsError> {
    check_dims(h, psi0)?;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(DynamicsError::InvalidDensityMatrix("loss rate must be finite and >= 0".into()));
    }
    let closed = super::evolve_spectral(h, psi0, grid)?;
    let times = grid.physical_times();
    let survival: Array1<f64> = times.iter().map(|t| (-gamma * t).exp()).collect();
    let mut populations = closed.populations;
    for (mut row, s) in populations.rows_mut().into_iter().zip(survival.iter()) {
        row.mapv_inplace(|p| p * s);
    }
    let sink: Vec<f64> = times.iter().map(|t| -(-gamma * t).exp_m1()).collect();
    let norm = populations.rows().into_iter().zip(&sink).map(|(r, v)| r.sum() + v).collect();
    Ok(Trajectory {
        grid: grid.clone(),
        populations,
        virtual_population: Some(sink),
        norm,
        amplitudes: None,
        engine: Engine::UniformDecay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_real_hamiltonian, caging_flux_odd, DisorderAssignment, LatticeSpec};
    use approx::assert_abs_diff_eq;

    fn setup(cells: usize, delta: f64) -> (ComplexMatrix, Wavefunction) {
        let spec = LatticeSpec::new(cells, 1.0, caging_flux_odd(3).unwrap())
            .unwrap()
            .with_disorder(DisorderAssignment::fixed(delta).unwrap());
        let h = build_real_hamiltonian(&spec).unwrap();
        let psi = Wavefunction::single_site(spec.site_count(), spec.geometry().center_a_site()).unwrap();
        (h, psi)
    }

    #[test]
    fn density_matrix_validation() {
        let psi = Wavefunction::single_site(3, 1).unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        assert_eq!(rho.sites(), 3);
        assert_eq!(rho.populations(), vec![0.0, 1.0, 0.0, 0.0]);
        assert!(DensityMatrix::new(rho.matrix().clone()).is_ok());
        assert_eq!(DensityMatrix::virtual_state(3).populations(), vec![0.0, 0.0, 0.0, 1.0]);
        let mut bad = rho.matrix().clone();
        bad[[0, 1]] = C64::new(0.0, 0.1);
        assert!(DensityMatrix::new(bad).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::zeros((3, 3))).is_err());
    }

    #[test]
    fn zero_loss_matches_closed_evolution() {
        let (h, psi) = setup(4, 0.4);
        let grid = TimeGrid::new(2.0, 21, 1.0).unwrap();
        let open = evolve_lindblad(&h, 0.0, &DensityMatrix::from_pure(&psi), &grid, 1e-3).unwrap();
        let closed = super::super::evolve_spectral(&h, &psi, &grid).unwrap();
        let diff = (&open.populations - &closed.populations).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        assert!(diff < 1e-7, "{diff}");
        assert!(open.virtual_population.unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn full_solver_matches_uniform_closed_form() {
        let (h, psi) = setup(5, 0.8);
        let gamma = 0.2;
        let grid = TimeGrid::new(3.0, 31, 1.0).unwrap();
        let full = evolve_lindblad(&h, gamma, &DensityMatrix::from_pure(&psi), &grid, 1e-3).unwrap();
        let fast = evolve_uniform_decay(&h, gamma, &psi, &grid).unwrap();
        let diff = (&full.populations - &fast.populations).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        assert!(diff < 1e-7, "{diff}");
        for (a, b) in full.virtual_population.unwrap().iter().zip(fast.virtual_population.unwrap()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-7);
        }
        for n in full.norm {
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn state_stays_physical_with_site_dependent_loss() {
        let (h, psi) = setup(4, 0.3);
        let rates: Vec<f64> = (0..h.nrows()).map(|k| 0.05 * (k % 3) as f64).collect();
        let solver = LindbladSolver::new(&h, rates).unwrap();
        let grid = TimeGrid::new(4.0, 41, 1.0).unwrap();
        let mut worst_herm = 0.0f64;
        let mut worst_diag = 0.0f64;
        let last = solver
            .integrate(&DensityMatrix::from_pure(&psi), &grid, 1e-3, |_, rho| {
                worst_herm = worst_herm.max(linalg::hermiticity_defect(rho));
                worst_diag = worst_diag.min(rho.diag().iter().map(|z| z.re).fold(f64::INFINITY, f64::min));
            })
            .unwrap();
        assert!(worst_herm < 1e-9);
        assert!(worst_diag > -1e-9);
        assert_abs_diff_eq!(last.trace(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sink_is_stationary() {
        let (h, _) = setup(3, 0.0);
        let grid = TimeGrid::new(1.0, 5, 1.0).unwrap();
        let sink = DensityMatrix::virtual_state(h.nrows());
        let traj = evolve_lindblad(&h, 0.3, &sink, &grid, 1e-3).unwrap();
        assert!(traj.virtual_population.unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_non_hermitian_hamiltonian() {
        let mut h = ComplexMatrix::zeros((2, 2));
        h[[0, 1]] = C64::new(0.0, -0.1);
        h[[1, 0]] = C64::new(0.0, -0.1);
        assert!(LindbladSolver::uniform(&h, 0.1).is_err());
    }
}
