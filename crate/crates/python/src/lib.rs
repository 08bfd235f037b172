//! Python bindings. Sites are 1-based at this boundary, times are in units
//! of `pi/J`, and arrays come back as nested lists.

use std::path::PathBuf;

use abcage::commands;
use abcage::config::Overrides;
use abcage::diagnostics;
use abcage::dynamics::{simulate, EngineOptions, LindbladEngine, DEFAULT_DT};
use abcage::ensemble::{self, Axis, AxisName, FluxFamily, RunOptions, SweepBase};
use abcage::model::{self, build_real_hamiltonian, DisorderAssignment, FluxConfig, FLAT_BAND_TOL};
use abcage::spectra::{self, DEFAULT_K_POINTS};
use abcage::{Command, EnsembleSpec, IpnDefinition, IpnNormalization, IpnSeries, LatticeSpec, RunConfig, TimeGrid};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn invalid(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn rows(matrix: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    matrix.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn ipn_definition(name: &str) -> PyResult<IpnDefinition> {
    match name {
        "per_site" => Ok(IpnDefinition::PerSite),
        "per_cell" => Ok(IpnDefinition::PerCell),
        other => Err(invalid(format!("unknown ipn definition {other:?} (per_site, per_cell)"))),
    }
}

fn axis_name(name: &str) -> PyResult<AxisName> {
    match name {
        "phi" => Ok(AxisName::Phi),
        "delta" => Ok(AxisName::Delta),
        "gamma" => Ok(AxisName::Gamma),
        "gamma_nh" => Ok(AxisName::GammaNh),
        other => Err(invalid(format!("unknown axis {other:?} (phi, delta, gamma, gamma_nh)"))),
    }
}

/// True when `sum cos(phi_i)` and `sum sin(phi_i)` both vanish within `tol`.
#[pyfunction]
#[pyo3(signature = (phases, tol = FLAT_BAND_TOL))]
fn flat_band_check(phases: Vec<f64>, tol: f64) -> PyResult<bool> {
    Ok(FluxConfig::new(phases).map_err(invalid)?.is_flat_band(tol))
}

/// `arccos(-1/(N-1))` for odd `N`.
#[pyfunction]
fn caging_angle(paths: usize) -> PyResult<f64> {
    model::caging_angle_odd(paths).map_err(invalid)
}

#[pyclass(get_all, frozen)]
struct Bands {
    k: Vec<f64>,
    /// Per-k ascending energies.
    energies: Vec<Vec<f64>>,
    flatness: f64,
}

#[pyfunction]
#[pyo3(signature = (phases, coupling = 1.0, k_points = DEFAULT_K_POINTS))]
fn bands(phases: Vec<f64>, coupling: f64, k_points: usize) -> PyResult<Bands> {
    let flux = FluxConfig::new(phases).map_err(invalid)?;
    let b = spectra::band_structure(&flux, coupling, k_points).map_err(invalid)?;
    Ok(Bands { k: b.k_grid, energies: b.energies, flatness: b.flatness })
}

/// A finite lattice. Without `phases` it uses the symmetric caging flux for
/// `paths` (odd: `arccos(-1/(N-1))`, even: `0` and `pi`), which is also the
/// family a `phi` sweep varies.
#[pyclass(frozen)]
struct Lattice {
    spec: LatticeSpec,
    family: Option<FluxFamily>,
}

#[pymethods]
impl Lattice {
    #[new]
    #[pyo3(signature = (cells = 9, paths = 5, phases = None, coupling = 1.0, delta = 0.0, gamma = 0.0, gamma_nh = 0.0))]
    fn new(
        cells: usize,
        paths: usize,
        phases: Option<Vec<f64>>,
        coupling: f64,
        delta: f64,
        gamma: f64,
        gamma_nh: f64,
    ) -> PyResult<Self> {
        let (flux, family) = match phases {
            Some(p) => (FluxConfig::new(p).map_err(invalid)?, None),
            None if paths % 2 == 1 => (model::caging_flux_odd(paths).map_err(invalid)?, Some(FluxFamily::OddSymmetric)),
            None => (model::caging_flux_even(paths, 0.0, 1).map_err(invalid)?, Some(FluxFamily::EvenSymmetric { m: 1 })),
        };
        let mut spec = LatticeSpec::new(cells, coupling, flux).map_err(invalid)?;
        if delta != 0.0 {
            spec = spec.with_disorder(DisorderAssignment::fixed(delta).map_err(invalid)?);
        }
        let spec = spec.with_dissipation(gamma).and_then(|s| s.with_gamma_nh(gamma_nh)).map_err(invalid)?;
        Ok(Self { spec, family })
    }

    #[getter]
    fn site_count(&self) -> usize {
        self.spec.site_count()
    }

    /// 1-based index of the central `A` site.
    #[getter]
    fn center_site(&self) -> usize {
        self.spec.geometry().center_a_site() + 1
    }

    #[getter]
    fn phases(&self) -> Vec<f64> {
        self.spec.flux().phases().to_vec()
    }

    #[getter]
    fn is_flat_band(&self) -> bool {
        self.spec.flux().is_flat_band(FLAT_BAND_TOL)
    }

    fn hamiltonian(&self) -> PyResult<Vec<Vec<Complex64>>> {
        let h = build_real_hamiltonian(&self.spec).map_err(invalid)?;
        Ok(h.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Lattice(cells={}, paths={}, coupling={:?}, gamma={:?}, gamma_nh={:?})",
            self.spec.cells(),
            self.spec.paths(),
            self.spec.coupling(),
            self.spec.gamma_diss(),
            self.spec.gamma_nh()
        )
    }
}

#[pyclass(get_all, frozen)]
struct Evolution {
    times: Vec<f64>,
    /// Samples x sites, unrenormalized.
    populations: Vec<Vec<f64>>,
    /// Sink population for open systems.
    sink: Option<Vec<f64>>,
    norm: Vec<f64>,
    ipn: Vec<f64>,
    sigma: f64,
    engine: String,
}

fn run_options(lattice: &Lattice, initial_site: Option<usize>, ipn: &str, dt: f64, lindblad: &str) -> PyResult<RunOptions> {
    let mut run = RunOptions::centered(&lattice.spec);
    if let Some(site) = initial_site {
        if site == 0 || site > lattice.spec.site_count() {
            return Err(invalid(format!("initial_site {site} outside 1..={}", lattice.spec.site_count())));
        }
        run.initial_site = site - 1;
    }
    run.definition = ipn_definition(ipn)?;
    let lindblad = match lindblad {
        "full" => LindbladEngine::Full,
        "uniform_decay" => LindbladEngine::UniformDecay,
        other => return Err(invalid(format!("unknown lindblad engine {other:?} (full, uniform_decay)"))),
    };
    run.engine = EngineOptions { dt, lindblad };
    Ok(run)
}

/// Evolve one excitation and measure its IPN. Non-Hermitian runs report the
/// renormalized IPN; open systems include the sink.
#[pyfunction]
#[pyo3(signature = (lattice, t_max = 10.0, samples = 201, initial_site = None, ipn = "per_site", dt = DEFAULT_DT, lindblad = "full"))]
#[allow(clippy::too_many_arguments)]
fn evolve(
    py: Python<'_>,
    lattice: &Lattice,
    t_max: f64,
    samples: usize,
    initial_site: Option<usize>,
    ipn: &str,
    dt: f64,
    lindblad: &str,
) -> PyResult<Evolution> {
    let run = run_options(lattice, initial_site, ipn, dt, lindblad)?;
    let grid = TimeGrid::new(t_max, samples, lattice.spec.coupling()).map_err(invalid)?;
    let spec = &lattice.spec;
    let (trajectory, series) = py.detach(|| ensemble::run_point(spec, &grid, &run)).map_err(failed)?;
    let sigma = series.fluctuation().map_err(failed)?.sigma;
    Ok(Evolution {
        times: grid.times(),
        populations: rows(&trajectory.populations),
        sink: trajectory.virtual_population.clone(),
        norm: trajectory.norm.clone(),
        ipn: series.values,
        sigma,
        engine: format!("{:?}", trajectory.engine).to_lowercase(),
    })
}

/// `sum p_i^2`, optionally after dividing by `sum p_i`.
#[pyfunction]
#[pyo3(signature = (populations, renormalize = true))]
fn ipn(populations: Vec<f64>, renormalize: bool) -> PyResult<f64> {
    diagnostics::ipn_per_site(&populations, renormalize).map_err(invalid)
}

/// `(mean, mean_square, sigma)` of a sampled IPN series.
#[pyfunction]
fn fluctuation(values: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = diagnostics::fluctuation(&values).map_err(invalid)?;
    Ok((f.mean_ipn, f.mean_sq_ipn, f.sigma))
}

#[pyclass(get_all, frozen)]
struct EnsembleMean {
    times: Vec<f64>,
    mean_ipn: Vec<f64>,
    /// Reps x samples.
    realization_ipn: Vec<Vec<f64>>,
    mean_heatmap: Vec<Vec<f64>>,
}

/// Seeded disorder average; realization `r` draws from stream `r` of `seed`.
#[pyfunction]
#[pyo3(signature = (lattice, delta_max = 2.0, reps = 500, seed = 20240611, t_max = 150.0, samples = 300))]
fn ensemble_mean(
    py: Python<'_>,
    lattice: &Lattice,
    delta_max: f64,
    reps: usize,
    seed: u64,
    t_max: f64,
    samples: usize,
) -> PyResult<EnsembleMean> {
    let spec = EnsembleSpec::new(lattice.spec.clone(), delta_max, reps, seed).map_err(invalid)?;
    let grid = TimeGrid::new(t_max, samples, lattice.spec.coupling()).map_err(invalid)?;
    let run = RunOptions::centered(&lattice.spec);
    let avg = py.detach(|| ensemble::ensemble_average(&spec, &grid, &run)).map_err(failed)?;
    Ok(EnsembleMean {
        times: grid.times(),
        mean_ipn: avg.mean_ipn.values,
        realization_ipn: rows(&avg.realization_ipn),
        mean_heatmap: rows(&avg.mean_heatmap),
    })
}

#[pyclass(get_all, frozen)]
struct SigmaMap {
    x_name: String,
    x: Vec<f64>,
    y_name: String,
    y: Vec<f64>,
    /// Rows follow `y`; `nan` marks a failed point.
    sigma: Vec<Vec<f64>>,
    failures: Vec<String>,
}

/// sigma over two axes with their default ranges (`phi` needs a lattice
/// built without explicit phases).
#[pyfunction]
#[pyo3(signature = (lattice, x = "phi", y = "delta", points = 41, t_max = 150.0, samples = 300, lindblad = "uniform_decay"))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    lattice: &Lattice,
    x: &str,
    y: &str,
    points: usize,
    t_max: f64,
    samples: usize,
    lindblad: &str,
) -> PyResult<SigmaMap> {
    let j = lattice.spec.coupling();
    let axis_x = Axis::default_for(axis_name(x)?, j, points).map_err(invalid)?;
    let axis_y = Axis::default_for(axis_name(y)?, j, points).map_err(invalid)?;
    let grid = TimeGrid::new(t_max, samples, j).map_err(invalid)?;
    let run = run_options(lattice, None, "per_site", DEFAULT_DT, lindblad)?;
    let base = SweepBase { spec: lattice.spec.clone(), family: lattice.family };
    let map = py.detach(|| ensemble::sweep_sigma(&base, &axis_x, &axis_y, &grid, &run)).map_err(invalid)?;
    let failures = map
        .status
        .iter()
        .filter_map(|s| match s {
            ensemble::PointStatus::Failed { message } => Some(message.clone()),
            ensemble::PointStatus::Ok { .. } => None,
        })
        .collect();
    Ok(SigmaMap {
        x_name: x.to_string(),
        x: axis_x.values(),
        y_name: y.to_string(),
        y: axis_y.values(),
        sigma: rows(&map.sigma),
        failures,
    })
}

/// Run a CLI command from a TOML config (or manifest.json). Returns the exit
/// code and the report lines; configuration problems raise `ValueError`.
#[pyfunction]
#[pyo3(signature = (command, config = None, out = None, seed = None, threads = None))]
fn run(
    py: Python<'_>,
    command: &str,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> PyResult<(i32, Vec<String>)> {
    let command = match command {
        "check" => Command::Check,
        "bands" => Command::Bands,
        "evolve" => Command::Evolve,
        "lindblad" => Command::Lindblad,
        "ensemble" => Command::Ensemble,
        "sweep" => Command::Sweep,
        other => return Err(invalid(format!("unknown command {other:?}"))),
    };
    if threads == Some(0) {
        return Err(invalid("threads must be at least 1"));
    }
    let mut cfg = match config {
        Some(path) => RunConfig::load(&path).map_err(invalid)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides { directory: out, seed, ipn: None, formats: None });
    let resolved = cfg.resolve(command).map_err(invalid)?;
    match py.detach(|| commands::execute(&resolved, threads)) {
        Ok(outcome) => Ok((outcome.exit_code(), outcome.lines)),
        Err(e) if e.exit_code() == 1 => Err(invalid(e)),
        Err(e) => Err(failed(e)),
    }
}

/// IPN series of an evolution under the raw (unrenormalized) convention.
#[pyfunction]
#[pyo3(signature = (lattice, t_max = 10.0, samples = 201, ipn = "per_site"))]
fn raw_ipn(py: Python<'_>, lattice: &Lattice, t_max: f64, samples: usize, ipn: &str) -> PyResult<Vec<f64>> {
    let definition = ipn_definition(ipn)?;
    let grid = TimeGrid::new(t_max, samples, lattice.spec.coupling()).map_err(invalid)?;
    let spec = &lattice.spec;
    let run = RunOptions::centered(spec);
    py.detach(|| {
        let psi0 = abcage::Wavefunction::single_site(spec.site_count(), run.initial_site).map_err(failed)?;
        let trajectory = simulate(spec, &psi0, &grid, &run.engine).map_err(failed)?;
        let series = IpnSeries::from_trajectory(&trajectory, &spec.geometry(), definition, IpnNormalization::Raw);
        series.map(|s| s.values).map_err(failed)
    })
}

#[pymodule]
fn abcage_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Lattice>()?;
    m.add_class::<Bands>()?;
    m.add_class::<Evolution>()?;
    m.add_class::<EnsembleMean>()?;
    m.add_class::<SigmaMap>()?;
    m.add_function(wrap_pyfunction!(flat_band_check, m)?)?;
    m.add_function(wrap_pyfunction!(caging_angle, m)?)?;
    m.add_function(wrap_pyfunction!(bands, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(raw_ipn, m)?)?;
    m.add_function(wrap_pyfunction!(ipn, m)?)?;
    m.add_function(wrap_pyfunction!(fluctuation, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_mean, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
