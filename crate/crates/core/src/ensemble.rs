//! Seeded disorder ensembles and parameter sweeps of the IPN fluctuation.
//!
//! Work units (realizations, grid points) are independent; they run on a
//! rayon pool and are collected in index order, and every reduction is a
//! sequential fold in that order. Results therefore do not depend on the
//! number of worker threads.
//!
//! Random draws use ChaCha8 (`rand_chacha`): the generator for realization
//! `r` is `ChaCha8Rng::seed_from_u64(seed)` switched to stream `r`, and the
//! `j`-th uniform is `(next_u64 >> 11) * 2^-53`. Uniform `2(n-1)` scales the
//! `+` energy on `C_{n,1}` and uniform `2(n-1)+1` the `-` energy on `C_{n,N}`.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{DiagnosticsError, IpnDefinition, IpnNormalization, IpnSeries};
use crate::dynamics::{simulate, DynamicsError, Engine, EngineOptions, TimeGrid, Trajectory, Wavefunction};
use crate::model::{DisorderAssignment, FluxConfig, LatticeSpec, ModelError, Site};

/// Identity of the disorder generator, echoed into manifests.
pub const RNG_ALGORITHM: &str = "chacha8/seed_from_u64/stream=rep/u=(next_u64>>11)*2^-53";

#[derive(Debug, Error)]
pub enum PointError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble: {0}")]
    Invalid(String),
    #[error("realization {index} failed: {source}")]
    Realization {
        index: usize,
        #[source]
        source: PointError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// `count` uniforms on `[0, 1)` from stream `stream` of `seed`.
pub fn unit_draws(seed: u64, stream: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count).map(|_| (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)).collect()
}

/// Runs `f` on a dedicated pool with `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, EnsembleError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| EnsembleError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    base: LatticeSpec,
    delta_max: f64,
    reps: usize,
    seed: u64,
}

impl EnsembleSpec {
    pub fn new(base: LatticeSpec, delta_max: f64, reps: usize, seed: u64) -> Result<Self, EnsembleError> {
        if reps == 0 {
            return Err(EnsembleError::Invalid("reps must be >= 1".into()));
        }
        if !(delta_max.is_finite() && delta_max >= 0.0) {
            return Err(EnsembleError::Invalid(format!("delta_max must be finite and >= 0, got {delta_max}")));
        }
        if base.paths() < 2 && delta_max > 0.0 {
            return Err(ModelError::DisorderNeedsTwoPaths(base.paths()).into());
        }
        Ok(Self { base, delta_max, reps, seed })
    }

    pub fn base(&self) -> &LatticeSpec {
        &self.base
    }

    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same draws with another range; realizations stay seed-paired.
    pub fn with_delta_max(&self, delta_max: f64) -> Result<Self, EnsembleError> {
        Self::new(self.base.clone(), delta_max, self.reps, self.seed)
    }
}

/// On-site energies of realization `rep` (0-based site order).
pub fn draw_disorder(spec: &EnsembleSpec, rep: usize) -> Result<Vec<f64>, EnsembleError> {
    if rep >= spec.reps {
        return Err(EnsembleError::Invalid(format!("rep {rep} out of range for {} reps", spec.reps)));
    }
    let g = spec.base.geometry();
    let n = g.paths();
    let u = unit_draws(spec.seed, rep as u64, 2 * (g.cells() - 1));
    let mut energies = vec![0.0; g.site_count()];
    if spec.delta_max == 0.0 {
        return Ok(energies);
    }
    for cell in 1..g.cells() {
        let k = 2 * (cell - 1);
        energies[g.index_of(Site::C { cell, path: 1 })] = u[k] * spec.delta_max;
        energies[g.index_of(Site::C { cell, path: n })] = -u[k + 1] * spec.delta_max;
    }
    Ok(energies)
}

/// Lattice of realization `rep`; explicit overrides of the base survive.
pub fn realization_spec(spec: &EnsembleSpec, rep: usize) -> Result<LatticeSpec, EnsembleError> {
    let energies = draw_disorder(spec, rep)?;
    let mut disorder = DisorderAssignment::ensemble(spec.delta_max)?.with_realization(energies);
    for (&site, &energy) in spec.base.disorder().overrides() {
        disorder = disorder.with_override(site, energy);
    }
    Ok(spec.base.clone().with_disorder(disorder))
}

/// How a single run is started and measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunOptions {
    /// 0-based initial site.
    pub initial_site: usize,
    pub definition: IpnDefinition,
    pub normalization: IpnNormalization,
    pub engine: EngineOptions,
}

impl RunOptions {
    /// Excitation at the central `A` site with default metrics and engines.
    pub fn centered(spec: &LatticeSpec) -> Self {
        Self {
            initial_site: spec.geometry().center_a_site(),
            definition: IpnDefinition::default(),
            normalization: IpnNormalization::default(),
            engine: EngineOptions::default(),
        }
    }
}

/// Evolve `spec` and measure its IPN series.
pub fn run_point(spec: &LatticeSpec, grid: &TimeGrid, options: &RunOptions) -> Result<(Trajectory, IpnSeries), PointError> {
    let psi0 = Wavefunction::single_site(spec.site_count(), options.initial_site)?;
    let trajectory = simulate(spec, &psi0, grid, &options.engine)?;
    let ipn = IpnSeries::from_trajectory(&trajectory, &spec.geometry(), options.definition, options.normalization)?;
    Ok((trajectory, ipn))
}

#[derive(Clone, Debug)]
pub struct EnsembleAverage {
    pub mean_ipn: IpnSeries,
    /// Samples x columns mean population matrix.
    pub mean_heatmap: Array2<f64>,
    /// Reps x samples IPN of every realization.
    pub realization_ipn: Array2<f64>,
}

/// Arithmetic means over all realizations, reduced in realization order.
pub fn ensemble_average(spec: &EnsembleSpec, grid: &TimeGrid, options: &RunOptions) -> Result<EnsembleAverage, EnsembleError> {
    type Run = Result<(Array2<f64>, Vec<f64>), EnsembleError>;
    let runs: Vec<Run> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let lattice = realization_spec(spec, rep)?;
            let (trajectory, ipn) = run_point(&lattice, grid, options)
                .map_err(|source| EnsembleError::Realization { index: rep, source })?;
            Ok((crate::diagnostics::heatmap(&trajectory), ipn.values))
        })
        .collect();

    let reps = spec.reps as f64;
    let mut mean_heatmap: Option<Array2<f64>> = None;
    let mut mean_values = vec![0.0; grid.samples()];
    let mut realization_ipn = Array2::zeros((spec.reps, grid.samples()));
    for (rep, run) in runs.into_iter().enumerate() {
        let (map, values) = run?;
        match &mut mean_heatmap {
            None => mean_heatmap = Some(map / reps),
            Some(acc) => acc.scaled_add(1.0 / reps, &map),
        }
        for (m, v) in mean_values.iter_mut().zip(&values) {
            *m += v / reps;
        }
        realization_ipn.row_mut(rep).assign(&ndarray::ArrayView1::from(&values));
    }
    let normalization = if spec.base.gamma_diss() > 0.0 { IpnNormalization::Raw } else { options.normalization };
    Ok(EnsembleAverage {
        mean_ipn: IpnSeries { grid: grid.clone(), values: mean_values, definition: options.definition, normalization },
        mean_heatmap: mean_heatmap.expect("reps >= 1"),
        realization_ipn,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    /// Scalar of the swept flux family.
    Phi,
    /// Fixed antisymmetric disorder strength.
    Delta,
    /// On-site loss rate.
    Gamma,
    /// Non-Hermitian hopping strength.
    GammaNh,
}

impl AxisName {
    pub fn as_str(&self) -> &'static str {
        match self {
            AxisName::Phi => "phi",
            AxisName::Delta => "delta",
            AxisName::Gamma => "gamma",
            AxisName::GammaNh => "gamma_nh",
        }
    }
}

/// Inclusive uniform axis. Energies are absolute (same units as `J`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(name: AxisName, min: f64, max: f64, points: usize) -> Result<Self, EnsembleError> {
        let axis = Self { name, min, max, points };
        axis.validate()?;
        Ok(axis)
    }

    /// Default range for `name` at coupling `J`.
    pub fn default_for(name: AxisName, coupling: f64, points: usize) -> Result<Self, EnsembleError> {
        let (min, max) = match name {
            AxisName::Phi => (0.0, TAU),
            AxisName::Delta => (-2.0 * coupling, 2.0 * coupling),
            AxisName::Gamma => (0.0, 0.05 * coupling),
            AxisName::GammaNh => (-0.1 * coupling, 0.1 * coupling),
        };
        Self::new(name, min, max, points)
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        let name = self.name.as_str();
        if self.points == 0 {
            return Err(EnsembleError::Invalid(format!("axis {name} needs at least 1 point")));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(EnsembleError::Invalid(format!("axis {name} range [{}, {}] is invalid", self.min, self.max)));
        }
        if self.points == 1 && self.min != self.max {
            return Err(EnsembleError::Invalid(format!("axis {name} with 1 point needs min == max")));
        }
        if self.name == AxisName::Gamma && self.min < 0.0 {
            return Err(EnsembleError::Invalid("axis gamma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| if i + 1 == self.points { self.max } else { self.min + (self.max - self.min) * i as f64 / last })
            .collect()
    }

    /// Cell width (zero for a single point).
    pub fn step(&self) -> f64 {
        if self.points > 1 {
            (self.max - self.min) / (self.points - 1) as f64
        } else {
            0.0
        }
    }
}

/// Flux family whose scalar the `phi` axis varies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum FluxFamily {
    /// `(0, phi, .., phi, -phi, .., -phi)`, odd path counts.
    OddSymmetric,
    /// `phi` on the first half, `phi + m pi` on the second, even path counts.
    EvenSymmetric { m: i64 },
}

impl FluxFamily {
    pub fn flux(&self, paths: usize, phi: f64) -> Result<FluxConfig, ModelError> {
        match self {
            FluxFamily::OddSymmetric => FluxConfig::odd_symmetric(paths, phi),
            FluxFamily::EvenSymmetric { m } => FluxConfig::even_symmetric(paths, phi, *m),
        }
    }
}

/// Base lattice of a sweep plus the family used for `phi` (`None` for an
/// explicit flux vector, which cannot be swept in `phi`).
#[derive(Clone, Debug)]
pub struct SweepBase {
    pub spec: LatticeSpec,
    pub family: Option<FluxFamily>,
}

impl SweepBase {
    /// `spec` with one axis value applied.
    pub fn apply(&self, spec: LatticeSpec, name: AxisName, value: f64) -> Result<LatticeSpec, ModelError> {
        match name {
            AxisName::Phi => match self.family {
                Some(family) => spec.with_flux(family.flux(self.spec.paths(), value)?),
                None => Ok(spec),
            },
            AxisName::Delta => {
                let mut disorder = DisorderAssignment::fixed(value)?;
                for (&site, &energy) in self.spec.disorder().overrides() {
                    disorder = disorder.with_override(site, energy);
                }
                Ok(spec.with_disorder(disorder))
            }
            AxisName::Gamma => spec.with_dissipation(value),
            AxisName::GammaNh => spec.with_gamma_nh(value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PointStatus {
    Ok { engine: Engine },
    Failed { message: String },
}

impl PointStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, PointStatus::Ok { .. })
    }
}

/// sigma over a 2D grid; rows follow `axis_y`, columns `axis_x`.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub axis_x: Axis,
    pub axis_y: Axis,
    /// `NaN` marks a failed point.
    pub sigma: Array2<f64>,
    pub status: Array2<PointStatus>,
}

impl SweepGrid {
    pub fn failed_points(&self) -> usize {
        self.status.iter().filter(|s| !s.is_ok()).count()
    }

    /// True when any point used the closed-form uniform-decay engine.
    pub fn fast_path_used(&self) -> bool {
        self.status.iter().any(|s| matches!(s, PointStatus::Ok { engine: Engine::UniformDecay }))
    }

    /// `(row, col)` of the largest finite sigma.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for ((r, c), &s) in self.sigma.indexed_iter() {
            if s.is_finite() && best.is_none_or(|(_, b)| s > b) {
                best = Some(((r, c), s));
            }
        }
        best.map(|(idx, _)| idx)
    }
}

fn sigma_point(spec: Result<LatticeSpec, ModelError>, grid: &TimeGrid, options: &RunOptions) -> (f64, PointStatus) {
    let run = || -> Result<(f64, Engine), PointError> {
        let spec = spec?;
        let (trajectory, ipn) = run_point(&spec, grid, options)?;
        Ok((ipn.fluctuation()?.sigma, trajectory.engine))
    };
    match run() {
        Ok((sigma, engine)) => (sigma, PointStatus::Ok { engine }),
        Err(e) => (f64::NAN, PointStatus::Failed { message: e.to_string() }),
    }
}

fn check_axes(base: &SweepBase, axes: &[&Axis]) -> Result<(), EnsembleError> {
    for a in axes {
        a.validate()?;
    }
    if base.family.is_none() && axes.iter().any(|a| a.name == AxisName::Phi) {
        return Err(EnsembleError::Invalid("a phi axis needs a symmetric flux family, not explicit phases".into()));
    }
    if axes.len() == 2 && axes[0].name == axes[1].name {
        return Err(EnsembleError::Invalid("sweep axes must be distinct".into()));
    }
    let has = |n| axes.iter().any(|a| a.name == n);
    if has(AxisName::Gamma) && has(AxisName::GammaNh) {
        return Err(EnsembleError::Invalid("gamma and gamma_nh cannot be swept together".into()));
    }
    Ok(())
}

/// sigma at every `(y, x)` point. Failed points hold `NaN` and a message.
pub fn sweep_sigma(
    base: &SweepBase,
    axis_x: &Axis,
    axis_y: &Axis,
    grid: &TimeGrid,
    options: &RunOptions,
) -> Result<SweepGrid, EnsembleError> {
    check_axes(base, &[axis_x, axis_y])?;
    let xs = axis_x.values();
    let ys = axis_y.values();
    let (nx, ny) = (xs.len(), ys.len());
    let points: Vec<(f64, PointStatus)> = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / nx, idx % nx);
            let spec = base
                .apply(base.spec.clone(), axis_y.name, ys[r])
                .and_then(|s| base.apply(s, axis_x.name, xs[c]));
            sigma_point(spec, grid, options)
        })
        .collect();
    let (sigma, status): (Vec<f64>, Vec<PointStatus>) = points.into_iter().unzip();
    Ok(SweepGrid {
        axis_x: axis_x.clone(),
        axis_y: axis_y.clone(),
        sigma: Array2::from_shape_vec((ny, nx), sigma).expect("grid shape"),
        status: Array2::from_shape_vec((ny, nx), status).expect("grid shape"),
    })
}

#[derive(Clone, Debug)]
pub struct SigmaCurve {
    pub axis: Axis,
    pub sigma: Vec<f64>,
    pub status: Vec<PointStatus>,
}

/// sigma along one axis.
pub fn sweep_sigma_1d(base: &SweepBase, axis: &Axis, grid: &TimeGrid, options: &RunOptions) -> Result<SigmaCurve, EnsembleError> {
    check_axes(base, &[axis])?;
    let (sigma, status) = axis
        .values()
        .into_par_iter()
        .map(|v| sigma_point(base.apply(base.spec.clone(), axis.name, v), grid, options))
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();
    Ok(SigmaCurve { axis: axis.clone(), sigma, status })
}

/// sigma versus fixed disorder strength for a flat-band base lattice.
pub fn sigma_vs_delta(
    base: &LatticeSpec,
    range: (f64, f64),
    points: usize,
    grid: &TimeGrid,
    options: &RunOptions,
) -> Result<SigmaCurve, EnsembleError> {
    if !base.flux().is_flat_band(crate::model::FLAT_BAND_TOL) {
        return Err(EnsembleError::Invalid("sigma_vs_delta needs a flat-band flux".into()));
    }
    let axis = Axis::new(AxisName::Delta, range.0, range.1, points)?;
    let sweep = SweepBase { spec: base.clone(), family: None };
    sweep_sigma_1d(&sweep, &axis, grid, options)
}
