//! Multi-path Aharonov-Bohm caging lattices.
//!
//! A one-dimensional chain of `A` sites joined by `N` parallel paths, each
//! through its own `C` site and carrying its own hopping phase. When the
//! phases satisfy `sum cos = sum sin = 0` the top Bloch band is flat and a
//! single excitation on an `A` site stays caged. This crate builds the
//! lattice Hamiltonians, checks flat-band conditions, propagates closed,
//! dissipative and non-Hermitian dynamics, and measures localization
//! through the inverse participation number and its time fluctuation.

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod linalg;
pub mod model;
pub mod output;
pub mod spectra;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{Command, ConfigError, RunConfig};
pub use diagnostics::{DiagnosticsError, FluctuationResult, IpnDefinition, IpnNormalization, IpnSeries};
pub use dynamics::{DynamicsError, Engine, TimeGrid, Trajectory, Wavefunction};
pub use ensemble::{EnsembleError, EnsembleSpec, PointError, SweepGrid};
pub use model::{FluxConfig, Geometry, LatticeSpec, ModelError};
pub use spectra::SpectraError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Point(#[from] PointError),
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// 1 for configuration problems, 2 for numerical or I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Model(_) => 1,
            Error::Ensemble(EnsembleError::Invalid(_)) => 1,
            _ => 2,
        }
    }
}
