//! Localization metrics computed from sampled populations.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{TimeGrid, Trajectory};
use crate::model::Geometry;

/// Populations below this are treated as numerical noise rather than invalid input.
pub const NEGATIVE_TOLERANCE: f64 = 1e-9;
/// Allowed `|sum - 1|` for open-system population vectors.
pub const TRACE_TOLERANCE: f64 = 1e-4;
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("population {index} is negative ({value:e})")]
    NegativePopulation { index: usize, value: f64 },
    #[error("population vector has zero total ({0:e}), cannot renormalize")]
    ZeroNorm(f64),
    #[error("open-system populations sum to {0}, expected 1")]
    TraceDeviation(f64),
    #[error("expected {expected} populations, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fluctuation needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpnDefinition {
    /// Sum of squared site populations.
    #[default]
    PerSite,
    /// Sum of squared cell populations (`A_n` with the `C_{n,i}` to its right).
    PerCell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpnNormalization {
    /// Populations used as stored.
    Raw,
    /// Populations divided by their sum first.
    #[default]
    Renormalized,
}

fn checked_total(populations: &[f64]) -> Result<f64, DiagnosticsError> {
    let mut total = 0.0;
    for (index, &value) in populations.iter().enumerate() {
        if value < -NEGATIVE_TOLERANCE || value.is_nan() {
            return Err(DiagnosticsError::NegativePopulation { index, value });
        }
        total += value;
    }
    Ok(total)
}

fn sum_of_squares(values: impl Iterator<Item = f64>, total: f64, renormalize: bool) -> Result<f64, DiagnosticsError> {
    let scale = if renormalize {
        if total.is_nan() || total <= ZERO_NORM {
            return Err(DiagnosticsError::ZeroNorm(total));
        }
        1.0 / total
    } else {
        1.0
    };
    Ok(values.map(|p| (p * scale).powi(2)).sum())
}

/// `sum_i p_i^2` over lattice sites.
pub fn ipn_per_site(populations: &[f64], renormalize: bool) -> Result<f64, DiagnosticsError> {
    let total = checked_total(populations)?;
    sum_of_squares(populations.iter().copied(), total, renormalize)
}

/// Populations summed per unit cell. The last cell holds only its `A` site.
pub fn cell_populations(populations: &[f64], geometry: &Geometry) -> Result<Vec<f64>, DiagnosticsError> {
    if populations.len() != geometry.site_count() {
        return Err(DiagnosticsError::LengthMismatch { expected: geometry.site_count(), got: populations.len() });
    }
    Ok(populations.chunks(geometry.paths() + 1).map(|c| c.iter().sum()).collect())
}

/// `sum_n (|a_n|^2 + sum_i |c_{n,i}|^2)^2`.
pub fn ipn_per_cell(populations: &[f64], geometry: &Geometry, renormalize: bool) -> Result<f64, DiagnosticsError> {
    let total = checked_total(populations)?;
    let cells = cell_populations(populations, geometry)?;
    sum_of_squares(cells.into_iter(), total, renormalize)
}

/// Sum of squared populations over lattice sites and the sink. The vector
/// must already be a normalized diagonal (`|sum - 1| <= 1e-4`).
pub fn ipn_open_system(rho_diag: &[f64]) -> Result<f64, DiagnosticsError> {
    let total = checked_total(rho_diag)?;
    if (total - 1.0).abs() > TRACE_TOLERANCE {
        return Err(DiagnosticsError::TraceDeviation(total));
    }
    sum_of_squares(rho_diag.iter().copied(), total, false)
}

/// IPN per sample of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IpnSeries {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub definition: IpnDefinition,
    pub normalization: IpnNormalization,
}

impl IpnSeries {
    /// Closed trajectories use the requested definition and normalization.
    /// Open trajectories include the sink as one more entry (its own group
    /// under `PerCell`) and are never renormalized.
    pub fn from_trajectory(
        trajectory: &Trajectory,
        geometry: &Geometry,
        definition: IpnDefinition,
        normalization: IpnNormalization,
    ) -> Result<Self, DiagnosticsError> {
        let mut values = Vec::with_capacity(trajectory.samples());
        let open = trajectory.virtual_population.as_ref();
        for (k, row) in trajectory.populations.rows().into_iter().enumerate() {
            let row = row.to_vec();
            let value = match (open, definition) {
                (None, IpnDefinition::PerSite) => ipn_per_site(&row, normalization == IpnNormalization::Renormalized)?,
                (None, IpnDefinition::PerCell) => {
                    ipn_per_cell(&row, geometry, normalization == IpnNormalization::Renormalized)?
                }
                (Some(_), IpnDefinition::PerSite) => ipn_open_system(&trajectory.full_populations(k))?,
                (Some(sink), IpnDefinition::PerCell) => {
                    let mut groups = cell_populations(&row, geometry)?;
                    groups.push(sink[k]);
                    ipn_open_system(&groups)?
                }
            };
            values.push(value);
        }
        let normalization = if open.is_some() { IpnNormalization::Raw } else { normalization };
        Ok(Self { grid: trajectory.grid.clone(), values, definition, normalization })
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn fluctuation(&self) -> Result<FluctuationResult, DiagnosticsError> {
        fluctuation(&self.values)
    }

    /// Time (units `pi/J`) of the first sample strictly below `threshold`.
    pub fn first_crossing_below(&self, threshold: f64) -> Option<f64> {
        self.values.iter().position(|&v| v < threshold).map(|k| self.grid.time(k))
    }

    /// Earliest sample time from which every later value stays strictly below
    /// `threshold`; `None` if the final sample is not below it.
    pub fn settles_below(&self, threshold: f64) -> Option<f64> {
        let last_above = self.values.iter().rposition(|&v| v >= threshold);
        match last_above {
            None => Some(0.0),
            Some(k) if k + 1 < self.values.len() => Some(self.grid.time(k + 1)),
            Some(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FluctuationResult {
    pub mean_ipn: f64,
    pub mean_sq_ipn: f64,
    pub sigma: f64,
}

/// Uniform-weight time averages and `sigma = sqrt(<I^2> - <I>^2)`, evaluated
/// as the root mean squared deviation. A constant series gives exactly zero.
/// Sums run over sorted values so the result is independent of sample order.
pub fn fluctuation(values: &[f64]) -> Result<FluctuationResult, DiagnosticsError> {
    if values.len() < 2 {
        return Err(DiagnosticsError::TooFewSamples(values.len()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean_ipn = sorted.iter().sum::<f64>() / n;
    let mut squares: Vec<f64> = sorted.iter().map(|v| v * v).collect();
    squares.sort_by(f64::total_cmp);
    let mean_sq_ipn = squares.iter().sum::<f64>() / n;
    if sorted[0] == sorted[sorted.len() - 1] {
        return Ok(FluctuationResult { mean_ipn: sorted[0], mean_sq_ipn: sorted[0] * sorted[0], sigma: 0.0 });
    }
    // two-pass form; <I^2> - <I>^2 loses everything to cancellation near constant series
    let mut deviations: Vec<f64> = sorted.iter().map(|v| (v - mean_ipn).powi(2)).collect();
    deviations.sort_by(f64::total_cmp);
    let sigma = (deviations.iter().sum::<f64>() / n).sqrt();
    Ok(FluctuationResult { mean_ipn, mean_sq_ipn, sigma })
}

/// Samples x sites population matrix; open systems gain a trailing sink column.
pub fn heatmap(trajectory: &Trajectory) -> Array2<f64> {
    match &trajectory.virtual_population {
        None => trajectory.populations.clone(),
        Some(sink) => {
            let (rows, cols) = trajectory.populations.dim();
            Array2::from_shape_fn((rows, cols + 1), |(r, c)| {
                if c < cols {
                    trajectory.populations[[r, c]]
                } else {
                    sink[r]
                }
            })
        }
    }
}

/// 1-based global indices of the first and last columns holding more than `threshold`.
pub fn support_range(heatmap: &Array2<f64>, threshold: f64) -> Option<(usize, usize)> {
    let active: Vec<usize> = (0..heatmap.ncols())
        .filter(|&c| heatmap.column(c).iter().any(|&p| p > threshold))
        .collect();
    Some((*active.first()? + 1, *active.last()? + 1))
}
