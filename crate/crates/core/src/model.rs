//! Lattice geometry, flux configurations and Hamiltonian construction.
//!
//! The chain has `cells` hub sites `A_n` joined by `N` parallel paths; path
//! `i` between `A_n` and `A_{n+1}` passes through the site `C_{n,i}`. The
//! hopping `A_n -> C_{n,i}` carries the transition phase `exp(-i phi_i)`, the
//! hopping `C_{n,i} -> A_{n+1}` is real. Boundaries are open.
//!
//! Sites are stored cell-major: `[A_1, C_{1,1}..C_{1,N}, A_2, ..., A_cells]`.
//! Internally indices are 0-based; file formats and the CLI use 1-based
//! global indices.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::ComplexMatrix;

/// Default tolerance for [`flat_band_check`].
pub const FLAT_BAND_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("flux needs at least one path")]
    NoPaths,
    #[error("phase {index} is not finite ({value})")]
    NonFinitePhase { index: usize, value: f64 },
    #[error("odd caging family needs an odd path count >= 3, got {0}")]
    OddFamilyPaths(usize),
    #[error("even caging family needs an even path count >= 2, got {0}")]
    EvenFamilyPaths(usize),
    #[error("even caging family needs an odd multiplier m, got {0}")]
    EvenMultiplier(i64),
    #[error("lattice needs at least 2 cells, got {0}")]
    TooFewCells(usize),
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("coupling J must be positive, got {0}")]
    NonPositiveCoupling(f64),
    #[error("dissipation rate must be >= 0, got {0}")]
    NegativeDissipation(f64),
    #[error("ensemble disorder range must be >= 0, got {0}")]
    NegativeDisorderRange(f64),
    #[error("antisymmetric disorder needs at least 2 paths, got {0}")]
    DisorderNeedsTwoPaths(usize),
    #[error("site index {index} out of range for {sites} sites")]
    SiteOutOfRange { index: usize, sites: usize },
    #[error("ensemble disorder has no drawn realization; draw one before building the Hamiltonian")]
    MissingRealization,
    #[error("realization has {got} on-site energies, lattice has {expected} sites")]
    RealizationLength { expected: usize, got: usize },
}

fn normalize_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Transition phases `phi_1..phi_N`, stored in `[0, 2pi)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluxConfig {
    phases: Vec<f64>,
}

impl FluxConfig {
    pub fn new(phases: Vec<f64>) -> Result<Self, ModelError> {
        if phases.is_empty() {
            return Err(ModelError::NoPaths);
        }
        if let Some((index, &value)) = phases.iter().enumerate().find(|(_, p)| !p.is_finite()) {
            return Err(ModelError::NonFinitePhase { index, value });
        }
        Ok(Self { phases: phases.into_iter().map(normalize_phase).collect() })
    }

    /// Every path carries the same phase.
    pub fn uniform(paths: usize, phi: f64) -> Result<Self, ModelError> {
        Self::new(vec![phi; paths])
    }

    /// `(0, phi, .., phi, -phi, .., -phi)` with `(N-1)/2` copies of each sign.
    pub fn odd_symmetric(paths: usize, phi: f64) -> Result<Self, ModelError> {
        if paths < 3 || paths.is_multiple_of(2) {
            return Err(ModelError::OddFamilyPaths(paths));
        }
        let half = (paths - 1) / 2;
        let mut phases = Vec::with_capacity(paths);
        phases.push(0.0);
        phases.extend(std::iter::repeat_n(phi, half));
        phases.extend(std::iter::repeat_n(-phi, half));
        Self::new(phases)
    }

    /// `N/2` copies of `phi` followed by `N/2` copies of `phi + m pi`.
    pub fn even_symmetric(paths: usize, phi: f64, m: i64) -> Result<Self, ModelError> {
        if paths < 2 || paths % 2 == 1 {
            return Err(ModelError::EvenFamilyPaths(paths));
        }
        if m % 2 == 0 {
            return Err(ModelError::EvenMultiplier(m));
        }
        let half = paths / 2;
        let shifted = phi + m as f64 * PI;
        let mut phases = Vec::with_capacity(paths);
        phases.extend(std::iter::repeat_n(phi, half));
        phases.extend(std::iter::repeat_n(shifted, half));
        Self::new(phases)
    }

    pub fn paths(&self) -> usize {
        self.phases.len()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// `(sum cos phi_i, sum sin phi_i)`; both vanish on a flat band.
    pub fn residuals(&self) -> (f64, f64) {
        self.phases
            .iter()
            .fold((0.0, 0.0), |(c, s), &p| (c + p.cos(), s + p.sin()))
    }

    pub fn is_flat_band(&self, tol: f64) -> bool {
        flat_band_check(self, tol)
    }
}

/// True iff `|sum cos phi_i| <= tol` and `|sum sin phi_i| <= tol`.
pub fn flat_band_check(flux: &FluxConfig, tol: f64) -> bool {
    debug_assert!(tol > 0.0);
    let (c, s) = flux.residuals();
    c.abs() <= tol && s.abs() <= tol
}

/// The odd-`N` caging angle `arccos(-1/(N-1))`.
pub fn caging_angle_odd(paths: usize) -> Result<f64, ModelError> {
    if paths < 3 || paths.is_multiple_of(2) {
        return Err(ModelError::OddFamilyPaths(paths));
    }
    Ok((-1.0 / (paths as f64 - 1.0)).acos())
}

/// Caging flux for odd `N`: the symmetric pattern at `arccos(-1/(N-1))`.
pub fn caging_flux_odd(paths: usize) -> Result<FluxConfig, ModelError> {
    FluxConfig::odd_symmetric(paths, caging_angle_odd(paths)?)
}

/// Caging flux for even `N`: half the paths at `base`, half at `base + m pi`.
pub fn caging_flux_even(paths: usize, base: f64, m: i64) -> Result<FluxConfig, ModelError> {
    FluxConfig::even_symmetric(paths, base, m)
}

/// A lattice site. Cells and paths are 1-based, matching the physical labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Site {
    A { cell: usize },
    C { cell: usize, path: usize },
}

impl Site {
    /// Cell whose block contains this site; `C_{n,i}` belongs to cell `n`.
    pub fn cell(&self) -> usize {
        match *self {
            Site::A { cell } | Site::C { cell, .. } => cell,
        }
    }
}

/// Index bookkeeping for a chain of `cells` hubs and `paths` paths per gap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Geometry {
    cells: usize,
    paths: usize,
}

impl Geometry {
    pub fn new(cells: usize, paths: usize) -> Result<Self, ModelError> {
        if cells < 2 {
            return Err(ModelError::TooFewCells(cells));
        }
        if paths == 0 {
            return Err(ModelError::NoPaths);
        }
        Ok(Self { cells, paths })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    /// `D = cells + (cells - 1) N`
    pub fn site_count(&self) -> usize {
        self.cells + (self.cells - 1) * self.paths
    }

    /// 0-based dense index of `A_cell`.
    pub fn a_index(&self, cell: usize) -> usize {
        debug_assert!((1..=self.cells).contains(&cell));
        (cell - 1) * (self.paths + 1)
    }

    /// 0-based dense index of `C_{cell,path}`.
    pub fn c_index(&self, cell: usize, path: usize) -> usize {
        debug_assert!((1..self.cells).contains(&cell));
        debug_assert!((1..=self.paths).contains(&path));
        (cell - 1) * (self.paths + 1) + path
    }

    pub fn index_of(&self, site: Site) -> usize {
        match site {
            Site::A { cell } => self.a_index(cell),
            Site::C { cell, path } => self.c_index(cell, path),
        }
    }

    /// 1-based global index, as used in file formats.
    pub fn global_index(&self, site: Site) -> usize {
        self.index_of(site) + 1
    }

    /// Inverse of [`Geometry::index_of`].
    pub fn site(&self, index: usize) -> Result<Site, ModelError> {
        if index >= self.site_count() {
            return Err(ModelError::SiteOutOfRange { index, sites: self.site_count() });
        }
        let block = self.paths + 1;
        let cell = index / block + 1;
        let offset = index % block;
        Ok(if offset == 0 { Site::A { cell } } else { Site::C { cell, path: offset } })
    }

    /// Default excitation point `A_ceil(cells/2)`.
    pub fn center_a_site(&self) -> usize {
        self.a_index(self.cells.div_ceil(2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderMode {
    None,
    Fixed,
    Ensemble,
}

/// On-site energies. In fixed mode `+magnitude` sits on every `C_{n,1}` and
/// `-magnitude` on every `C_{n,N}`; in ensemble mode `magnitude` is the
/// upper end of the uniform draw range and the energies come from a drawn
/// realization. Explicit per-site overrides replace whatever the mode
/// produced at those sites.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DisorderAssignment {
    mode: DisorderMode,
    magnitude: f64,
    realization: Option<Vec<f64>>,
    overrides: BTreeMap<usize, f64>,
}

impl Default for DisorderAssignment {
    fn default() -> Self {
        Self::none()
    }
}

impl DisorderAssignment {
    pub fn none() -> Self {
        Self { mode: DisorderMode::None, magnitude: 0.0, realization: None, overrides: BTreeMap::new() }
    }

    /// Antisymmetric fixed pattern of strength `delta`. A negative `delta`
    /// flips which end of each path group gets the positive shift.
    pub fn fixed(delta: f64) -> Result<Self, ModelError> {
        if !delta.is_finite() {
            return Err(ModelError::NonFinite { name: "disorder delta", value: delta });
        }
        Ok(Self { mode: DisorderMode::Fixed, magnitude: delta, ..Self::none() })
    }

    pub fn ensemble(delta_max: f64) -> Result<Self, ModelError> {
        if !delta_max.is_finite() {
            return Err(ModelError::NonFinite { name: "disorder delta_max", value: delta_max });
        }
        if delta_max < 0.0 {
            return Err(ModelError::NegativeDisorderRange(delta_max));
        }
        Ok(Self { mode: DisorderMode::Ensemble, magnitude: delta_max, ..Self::none() })
    }

    /// Attach a drawn realization (one energy per site, 0-based).
    pub fn with_realization(mut self, energies: Vec<f64>) -> Self {
        self.realization = Some(energies);
        self
    }

    /// Override the on-site energy at a 0-based site index.
    pub fn with_override(mut self, index: usize, energy: f64) -> Self {
        self.overrides.insert(index, energy);
        self
    }

    pub fn mode(&self) -> DisorderMode {
        self.mode
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn overrides(&self) -> &BTreeMap<usize, f64> {
        &self.overrides
    }

    pub fn realization(&self) -> Option<&[f64]> {
        self.realization.as_deref()
    }

    /// Resolve to one on-site energy per site.
    pub fn on_site_energies(&self, geometry: &Geometry) -> Result<Vec<f64>, ModelError> {
        let d = geometry.site_count();
        let mut energies = match self.mode {
            DisorderMode::None => vec![0.0; d],
            DisorderMode::Fixed => {
                let mut e = vec![0.0; d];
                if self.magnitude != 0.0 {
                    if geometry.paths() < 2 {
                        return Err(ModelError::DisorderNeedsTwoPaths(geometry.paths()));
                    }
                    for n in 1..geometry.cells() {
                        e[geometry.c_index(n, 1)] = self.magnitude;
                        e[geometry.c_index(n, geometry.paths())] = -self.magnitude;
                    }
                }
                e
            }
            DisorderMode::Ensemble => match &self.realization {
                Some(r) if r.len() == d => r.clone(),
                Some(r) => return Err(ModelError::RealizationLength { expected: d, got: r.len() }),
                None => return Err(ModelError::MissingRealization),
            },
        };
        for (&index, &value) in &self.overrides {
            if index >= d {
                return Err(ModelError::SiteOutOfRange { index, sites: d });
            }
            if !value.is_finite() {
                return Err(ModelError::NonFinite { name: "site override", value });
            }
            energies[index] = value;
        }
        Ok(energies)
    }
}

/// Full problem statement for one lattice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeSpec {
    cells: usize,
    coupling: f64,
    flux: FluxConfig,
    disorder: DisorderAssignment,
    gamma_nh: f64,
    gamma_diss: f64,
}

impl LatticeSpec {
    pub fn new(cells: usize, coupling: f64, flux: FluxConfig) -> Result<Self, ModelError> {
        Geometry::new(cells, flux.paths())?;
        if !coupling.is_finite() {
            return Err(ModelError::NonFinite { name: "coupling", value: coupling });
        }
        if coupling <= 0.0 {
            return Err(ModelError::NonPositiveCoupling(coupling));
        }
        Ok(Self {
            cells,
            coupling,
            flux,
            disorder: DisorderAssignment::none(),
            gamma_nh: 0.0,
            gamma_diss: 0.0,
        })
    }

    pub fn with_flux(mut self, flux: FluxConfig) -> Result<Self, ModelError> {
        Geometry::new(self.cells, flux.paths())?;
        self.flux = flux;
        Ok(self)
    }

    pub fn with_disorder(mut self, disorder: DisorderAssignment) -> Self {
        self.disorder = disorder;
        self
    }

    /// Anti-Hermitian hopping strength `Gamma`.
    pub fn with_gamma_nh(mut self, gamma_nh: f64) -> Result<Self, ModelError> {
        if !gamma_nh.is_finite() {
            return Err(ModelError::NonFinite { name: "gamma_nh", value: gamma_nh });
        }
        self.gamma_nh = gamma_nh;
        Ok(self)
    }

    /// Uniform decay rate `gamma` of every site into the virtual sink.
    pub fn with_dissipation(mut self, gamma: f64) -> Result<Self, ModelError> {
        if !gamma.is_finite() {
            return Err(ModelError::NonFinite { name: "gamma", value: gamma });
        }
        if gamma < 0.0 {
            return Err(ModelError::NegativeDissipation(gamma));
        }
        self.gamma_diss = gamma;
        Ok(self)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn paths(&self) -> usize {
        self.flux.paths()
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn flux(&self) -> &FluxConfig {
        &self.flux
    }

    pub fn disorder(&self) -> &DisorderAssignment {
        &self.disorder
    }

    pub fn gamma_nh(&self) -> f64 {
        self.gamma_nh
    }

    pub fn gamma_diss(&self) -> f64 {
        self.gamma_diss
    }

    pub fn geometry(&self) -> Geometry {
        Geometry { cells: self.cells, paths: self.flux.paths() }
    }

    pub fn site_count(&self) -> usize {
        self.geometry().site_count()
    }

    pub fn is_hermitian(&self) -> bool {
        self.gamma_nh == 0.0
    }
}

/// Real-space Hamiltonian with open boundaries.
///
/// `<A_n|H|C_{n,i}> = J e^{-i phi_i} - i Gamma`, `<C_{n,i}|H|A_n> = J e^{i phi_i} - i Gamma`,
/// and `J - i Gamma` both ways between `C_{n,i}` and `A_{n+1}`. The `-i Gamma`
/// addend has the same sign in both directions, so it is anti-Hermitian.
pub fn build_real_hamiltonian(spec: &LatticeSpec) -> Result<ComplexMatrix, ModelError> {
    let geometry = spec.geometry();
    let d = geometry.site_count();
    let j = spec.coupling;
    let nh = C64::new(0.0, -spec.gamma_nh);
    let mut h = ComplexMatrix::zeros((d, d));

    for n in 1..geometry.cells() {
        let a = geometry.a_index(n);
        let a_next = geometry.a_index(n + 1);
        for (i, &phi) in spec.flux.phases().iter().enumerate() {
            let c = geometry.c_index(n, i + 1);
            let forward = C64::from_polar(j, -phi);
            h[[a, c]] = forward + nh;
            h[[c, a]] = forward.conj() + nh;
            h[[a_next, c]] = C64::new(j, 0.0) + nh;
            h[[c, a_next]] = C64::new(j, 0.0) + nh;
        }
    }

    for (k, e) in spec.disorder.on_site_energies(&geometry)?.into_iter().enumerate() {
        h[[k, k]] = C64::new(e, 0.0);
    }
    Ok(h)
}

/// Bloch Hamiltonian: an `(N+1) x (N+1)` star matrix with first row
/// `J_i = J (e^{-i phi_i} + e^{-ik})` and first column `J_i^*`.
pub fn build_bloch_hamiltonian(flux: &FluxConfig, k: f64, coupling: f64) -> ComplexMatrix {
    let n = flux.paths();
    let mut h = ComplexMatrix::zeros((n + 1, n + 1));
    for (i, &phi) in flux.phases().iter().enumerate() {
        let ji = bloch_coupling(phi, k, coupling);
        h[[0, i + 1]] = ji;
        h[[i + 1, 0]] = ji.conj();
    }
    h
}

/// `J_i = J (e^{-i phi_i} + e^{-ik})`
pub fn bloch_coupling(phi: f64, k: f64, coupling: f64) -> C64 {
    (C64::from_polar(1.0, -phi) + C64::from_polar(1.0, -k)) * coupling
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, hermiticity_defect, max_abs_diff};
    use approx::assert_abs_diff_eq;

    fn reference_lattice() -> LatticeSpec {
        LatticeSpec::new(9, 1.0, caging_flux_odd(5).unwrap()).unwrap()
    }

    #[test]
    fn flat_band_examples() {
        for phi in [0.0, 0.3, 1.7, -2.2] {
            let f = FluxConfig::new(vec![phi, phi + PI]).unwrap();
            assert!(flat_band_check(&f, 1e-12));
        }
        let star = (-0.25f64).acos();
        let f = FluxConfig::new(vec![0.0, star, star, -star, -star]).unwrap();
        assert!(flat_band_check(&f, 1e-12));
        let f = FluxConfig::new(vec![0.0; 3]).unwrap();
        assert!(!flat_band_check(&f, FLAT_BAND_TOL));
        assert_eq!(f.residuals(), (3.0, 0.0));
    }

    #[test]
    fn odd_family_angles() {
        assert_abs_diff_eq!(caging_angle_odd(5).unwrap(), 1.823476582, epsilon = 1e-9);
        assert_abs_diff_eq!(caging_angle_odd(3).unwrap(), 2.0 * PI / 3.0, epsilon = 1e-14);
        assert_eq!(caging_flux_odd(4), Err(ModelError::OddFamilyPaths(4)));
        assert_eq!(caging_flux_odd(1), Err(ModelError::OddFamilyPaths(1)));
        for n in [3, 5, 7, 9, 11, 21] {
            let f = caging_flux_odd(n).unwrap();
            assert_eq!(f.paths(), n);
            assert!(flat_band_check(&f, 1e-12), "N={n}");
        }
    }

    #[test]
    fn odd_family_layout() {
        let f = caging_flux_odd(5).unwrap();
        let star = (-0.25f64).acos();
        let expected = [0.0, star, star, TAU - star, TAU - star];
        for (a, b) in f.phases().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn even_family() {
        let f = caging_flux_even(2, 0.0, 1).unwrap();
        assert_eq!(f.phases(), &[0.0, PI]);
        let f = caging_flux_even(4, 0.7, 1).unwrap();
        for (a, b) in f.phases().iter().zip([0.7, 0.7, 0.7 + PI, 0.7 + PI]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let f = caging_flux_even(6, 0.0, 3).unwrap();
        assert_abs_diff_eq!(f.phases()[5], PI, epsilon = 1e-12);
        assert!(flat_band_check(&f, 1e-12));
        assert_eq!(caging_flux_even(5, 0.0, 1), Err(ModelError::EvenFamilyPaths(5)));
        assert_eq!(caging_flux_even(4, 0.0, 2), Err(ModelError::EvenMultiplier(2)));
        for m in [-3, -1, 1, 5] {
            assert!(flat_band_check(&caging_flux_even(8, 0.4, m).unwrap(), 1e-12));
        }
    }

    #[test]
    fn phases_are_normalized() {
        let f = FluxConfig::new(vec![-1e-18, 3.0 * PI, -PI / 2.0]).unwrap();
        for &p in f.phases() {
            assert!((0.0..TAU).contains(&p));
        }
        assert!(FluxConfig::new(vec![f64::NAN]).is_err());
        assert_eq!(FluxConfig::new(vec![]), Err(ModelError::NoPaths));
    }

    #[test]
    fn site_indexing() {
        let g = Geometry::new(9, 5).unwrap();
        assert_eq!(g.site_count(), 49);
        assert_eq!(g.global_index(Site::A { cell: 5 }), 25);
        assert_eq!(g.global_index(Site::A { cell: 1 }), 1);
        assert_eq!(g.global_index(Site::A { cell: 9 }), 49);
        assert_eq!(g.global_index(Site::C { cell: 4, path: 1 }), 20);
        assert_eq!(g.global_index(Site::C { cell: 5, path: 5 }), 30);
        assert_eq!(g.center_a_site(), 24);
        for k in 0..49 {
            assert_eq!(g.index_of(g.site(k).unwrap()), k);
        }
        assert!(g.site(49).is_err());
        assert_eq!(Geometry::new(1, 5), Err(ModelError::TooFewCells(1)));
    }

    #[test]
    fn reference_hamiltonian_shape() {
        let h = build_real_hamiltonian(&reference_lattice()).unwrap();
        assert_eq!(h.dim(), (49, 49));
        assert_eq!(hermiticity_defect(&h), 0.0);
        let g = Geometry::new(9, 5).unwrap();
        for n in 2..9 {
            let row = h.row(g.a_index(n));
            assert_eq!(row.iter().filter(|z| z.norm() > 0.0).count(), 10);
        }
        for n in [1, 9] {
            let row = h.row(g.a_index(n));
            assert_eq!(row.iter().filter(|z| z.norm() > 0.0).count(), 5);
        }
    }

    #[test]
    fn non_hermitian_addend() {
        let spec = reference_lattice().with_gamma_nh(0.1).unwrap();
        let h = build_real_hamiltonian(&spec).unwrap();
        assert_abs_diff_eq!(max_abs_diff(&h, &dagger(&h)), 0.2, epsilon = 1e-15);
        // Hermitian part equals the Gamma = 0 matrix
        let h0 = build_real_hamiltonian(&reference_lattice()).unwrap();
        let herm = (&h + &dagger(&h)).mapv(|z| z * 0.5);
        assert!(max_abs_diff(&herm, &h0) < 1e-15);
    }

    #[test]
    fn fixed_disorder_placement() {
        let spec = reference_lattice().with_disorder(DisorderAssignment::fixed(2.0).unwrap());
        let h = build_real_hamiltonian(&spec).unwrap();
        let g = spec.geometry();
        let diag: Vec<f64> = h.diag().iter().map(|z| z.re).collect();
        assert_eq!(diag.iter().filter(|&&e| e == 2.0).count(), 8);
        assert_eq!(diag.iter().filter(|&&e| e == -2.0).count(), 8);
        assert_eq!(diag[g.c_index(3, 1)], 2.0);
        assert_eq!(diag[g.c_index(3, 5)], -2.0);
        assert_eq!(hermiticity_defect(&h), 0.0);
    }

    #[test]
    fn overrides_and_realizations() {
        let g = Geometry::new(3, 2).unwrap();
        let d = DisorderAssignment::none().with_override(1, 0.5);
        assert_eq!(d.on_site_energies(&g).unwrap()[1], 0.5);
        let d = DisorderAssignment::none().with_override(99, 0.5);
        assert!(matches!(d.on_site_energies(&g), Err(ModelError::SiteOutOfRange { .. })));
        let e = DisorderAssignment::ensemble(2.0).unwrap();
        assert_eq!(e.on_site_energies(&g), Err(ModelError::MissingRealization));
        let e = e.with_realization(vec![0.25; 7]);
        assert_eq!(e.on_site_energies(&g).unwrap(), vec![0.25; 7]);
        assert!(DisorderAssignment::ensemble(-1.0).is_err());
    }

    #[test]
    fn spec_validation() {
        let f = caging_flux_odd(5).unwrap();
        assert!(LatticeSpec::new(9, 0.0, f.clone()).is_err());
        assert!(LatticeSpec::new(9, f64::INFINITY, f.clone()).is_err());
        assert!(LatticeSpec::new(1, 1.0, f.clone()).is_err());
        let s = LatticeSpec::new(9, 1.0, f).unwrap();
        assert!(s.clone().with_dissipation(-0.1).is_err());
        assert!(s.clone().with_gamma_nh(f64::NAN).is_err());
    }

    #[test]
    fn bloch_matrix_examples() {
        let f = FluxConfig::new(vec![0.0]).unwrap();
        let h = build_bloch_hamiltonian(&f, PI, 1.0);
        assert!(h.iter().all(|z| z.norm() < 1e-15));

        let f = FluxConfig::uniform(4, 0.0).unwrap();
        let h = build_bloch_hamiltonian(&f, 0.0, 1.5);
        for i in 1..=4 {
            assert_abs_diff_eq!(h[[0, i]].re, 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(h[[0, i]].im, 0.0, epsilon = 1e-15);
        }
        assert_eq!(hermiticity_defect(&h), 0.0);
    }
}
