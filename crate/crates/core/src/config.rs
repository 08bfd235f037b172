//! Declarative run configuration (TOML).
//!
//! Every field is optional in the file. [`RunConfig::resolve`] fills the
//! defaults of the requested command, validates the result against the
//! model preconditions, and returns both the fully expanded config (echoed
//! into manifests) and the domain objects built from it. Energies are
//! absolute (same units as `coupling_J`), times are in units of `pi/J`,
//! and site numbers are 1-based global indices.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{IpnDefinition, IpnNormalization};
use crate::dynamics::{EngineOptions, LindbladEngine, TimeGrid, DEFAULT_DT};
use crate::ensemble::{Axis, AxisName, EnsembleSpec, FluxFamily, RunOptions, SweepBase};
use crate::model::{caging_angle_odd, DisorderAssignment, FluxConfig, LatticeSpec};
use crate::spectra::DEFAULT_K_POINTS;

pub const DEFAULT_CELLS: usize = 9;
pub const DEFAULT_PATHS: usize = 5;
pub const DEFAULT_SEED: u64 = 20_240_611;
pub const DEFAULT_REPS: usize = 500;
pub const DEFAULT_SWEEP_POINTS: usize = 81;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(path: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), message: message.to_string() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Check,
    Bands,
    Evolve,
    Lindblad,
    Ensemble,
    Sweep,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Bands => "bands",
            Command::Evolve => "evolve",
            Command::Lindblad => "lindblad",
            Command::Ensemble => "ensemble",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipation: Option<DissipationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonhermitian: Option<NonHermitianSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<BandsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, rename = "coupling_J", alias = "coupling_j", skip_serializing_if = "Option::is_none")]
    pub coupling_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux: Option<FluxSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxMode {
    OddSymmetric,
    EvenSymmetric,
    Explicit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<FluxMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderModeName {
    None,
    Fixed,
    Ensemble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteOverride {
    pub site: usize,
    pub energy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<DisorderModeName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_overrides: Option<Vec<SiteOverride>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<LindbladEngine>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonHermitianSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_nh: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<AxisName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_x: Option<AxisSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_y: Option<AxisSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_points: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown format '{other}' (expected csv, json or svg)")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<Format>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ipn_definition: Option<IpnDefinition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ipn_normalization: Option<IpnNormalization>,
}

/// Everything a command needs, built from a fully expanded config.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub command: Command,
    /// Expanded config; re-resolving it yields the same objects.
    pub config: RunConfig,
    pub spec: LatticeSpec,
    pub family: Option<FluxFamily>,
    pub grid: TimeGrid,
    pub run: RunOptions,
    pub ensemble: Option<EnsembleSpec>,
    pub axes: Option<(Axis, Axis)>,
    pub k_points: usize,
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    pub seed: u64,
}

impl Resolved {
    pub fn sweep_base(&self) -> SweepBase {
        SweepBase { spec: self.spec.clone(), family: self.family }
    }

    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub directory: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ipn: Option<IpnDefinition>,
    pub formats: Option<Vec<Format>>,
}

impl RunConfig {
    /// Parse TOML; errors carry the offending field path.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::de::Deserializer::parse(text)
            .map_err(|e| ConfigError::Parse { path: "<document>".into(), message: e.to_string() })?;
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Parse the `config` object of a JSON manifest.
    pub fn from_manifest_str(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::Parse { path: "<manifest>".into(), message: e.to_string() })?;
        let config = value
            .get("config")
            .ok_or_else(|| ConfigError::Parse { path: "config".into(), message: "manifest has no config".into() })?;
        serde_path_to_error::deserialize(config).map_err(|e| ConfigError::Parse {
            path: format!("config.{}", e.path()),
            message: e.inner().to_string(),
        })
    }

    /// Load a `.toml` config or a `.json` manifest.
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_manifest_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(dir) = &overrides.directory {
            self.output.get_or_insert_with(Default::default).directory = Some(dir.clone());
        }
        if let Some(seed) = overrides.seed {
            self.disorder.get_or_insert_with(Default::default).seed = Some(seed);
        }
        if let Some(ipn) = overrides.ipn {
            self.output.get_or_insert_with(Default::default).ipn_definition = Some(ipn);
        }
        if let Some(formats) = &overrides.formats {
            self.output.get_or_insert_with(Default::default).formats = Some(formats.clone());
        }
    }

    /// Expand defaults for `command`, validate, and build domain objects.
    pub fn resolve(&self, command: Command) -> Result<Resolved, ConfigError> {
        let mut cfg = self.clone();

        let model = cfg.model.get_or_insert_with(Default::default);
        let cells = *model.cells.get_or_insert(DEFAULT_CELLS);
        let paths = *model.paths.get_or_insert(DEFAULT_PATHS);
        let coupling = *model.coupling_j.get_or_insert(1.0);
        let flux = model.flux.get_or_insert_with(Default::default);
        let mode = *flux.mode.get_or_insert(if paths % 2 == 1 { FluxMode::OddSymmetric } else { FluxMode::EvenSymmetric });
        let (flux_config, family) = match mode {
            FluxMode::OddSymmetric => {
                if flux.values.is_some() || flux.m.is_some() {
                    return Err(invalid("model.flux", "odd_symmetric takes only phi"));
                }
                let default_phi = caging_angle_odd(paths).map_err(|e| invalid("model.paths", e))?;
                let phi = *flux.phi.get_or_insert(default_phi);
                let f = FluxConfig::odd_symmetric(paths, phi).map_err(|e| invalid("model.flux", e))?;
                (f, Some(FluxFamily::OddSymmetric))
            }
            FluxMode::EvenSymmetric => {
                if flux.values.is_some() {
                    return Err(invalid("model.flux", "even_symmetric takes phi and m, not values"));
                }
                let phi = *flux.phi.get_or_insert(0.0);
                let m = *flux.m.get_or_insert(1);
                let f = FluxConfig::even_symmetric(paths, phi, m).map_err(|e| invalid("model.flux", e))?;
                (f, Some(FluxFamily::EvenSymmetric { m }))
            }
            FluxMode::Explicit => {
                if flux.phi.is_some() || flux.m.is_some() {
                    return Err(invalid("model.flux", "explicit takes only values"));
                }
                let values = flux.values.clone().ok_or_else(|| invalid("model.flux.values", "required for explicit mode"))?;
                if values.len() != paths {
                    return Err(invalid("model.flux.values", format!("expected {paths} phases, got {}", values.len())));
                }
                (FluxConfig::new(values).map_err(|e| invalid("model.flux.values", e))?, None)
            }
        };
        let mut spec = LatticeSpec::new(cells, coupling, flux_config).map_err(|e| invalid("model", e))?;
        let sites = spec.site_count();

        let disorder = cfg.disorder.get_or_insert_with(Default::default);
        let default_mode = if command == Command::Ensemble { DisorderModeName::Ensemble } else { DisorderModeName::None };
        let dmode = *disorder.mode.get_or_insert(default_mode);
        let seed = *disorder.seed.get_or_insert(DEFAULT_SEED);
        let mut assignment = match dmode {
            DisorderModeName::None => {
                if disorder.delta.is_some() || disorder.delta_max.is_some() || disorder.reps.is_some() {
                    return Err(invalid("disorder", "mode none takes no delta, delta_max or reps"));
                }
                DisorderAssignment::none()
            }
            DisorderModeName::Fixed => {
                let delta = *disorder.delta.get_or_insert(coupling);
                DisorderAssignment::fixed(delta).map_err(|e| invalid("disorder.delta", e))?
            }
            DisorderModeName::Ensemble => {
                let dm = *disorder.delta_max.get_or_insert(2.0 * coupling);
                disorder.reps.get_or_insert(DEFAULT_REPS);
                DisorderAssignment::ensemble(dm).map_err(|e| invalid("disorder.delta_max", e))?
            }
        };
        if dmode == DisorderModeName::Fixed && paths < 2 && assignment.magnitude() != 0.0 {
            return Err(invalid("disorder.delta", "fixed disorder needs at least 2 paths"));
        }
        for (i, o) in disorder.site_overrides.get_or_insert_with(Vec::new).iter().enumerate() {
            if o.site == 0 || o.site > sites {
                return Err(invalid(&format!("disorder.site_overrides[{i}].site"), format!("must be in 1..={sites}")));
            }
            if !o.energy.is_finite() {
                return Err(invalid(&format!("disorder.site_overrides[{i}].energy"), "must be finite"));
            }
            assignment = assignment.with_override(o.site - 1, o.energy);
        }
        spec = spec.with_disorder(assignment);

        let dissipation = cfg.dissipation.get_or_insert_with(Default::default);
        let gamma = *dissipation.gamma.get_or_insert(0.0);
        let default_engine = if command == Command::Sweep { LindbladEngine::UniformDecay } else { LindbladEngine::Full };
        let lindblad = *dissipation.engine.get_or_insert(default_engine);
        spec = spec.with_dissipation(gamma).map_err(|e| invalid("dissipation.gamma", e))?;

        let gamma_nh = *cfg.nonhermitian.get_or_insert_with(Default::default).gamma_nh.get_or_insert(0.0);
        spec = spec.with_gamma_nh(gamma_nh).map_err(|e| invalid("nonhermitian.gamma_nh", e))?;
        if gamma > 0.0 && gamma_nh != 0.0 {
            return Err(invalid("nonhermitian.gamma_nh", "cannot be combined with dissipation.gamma > 0"));
        }
        if command == Command::Evolve && gamma > 0.0 {
            return Err(invalid("dissipation.gamma", "evolve is for closed systems; use the lindblad command"));
        }

        let time = cfg.time.get_or_insert_with(Default::default);
        let long = matches!(command, Command::Ensemble | Command::Sweep);
        let t_max = *time.t_max.get_or_insert(if long { 150.0 } else { 10.0 });
        let samples = *time.samples.get_or_insert(if long { 300 } else { 201 });
        let dt = *time.dt.get_or_insert(DEFAULT_DT);
        let grid = TimeGrid::new(t_max, samples, coupling).map_err(|e| invalid("time", e))?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("time.dt", "must be positive"));
        }

        let initial = cfg.initial.get_or_insert_with(Default::default);
        let site = *initial.site.get_or_insert(spec.geometry().center_a_site() + 1);
        if site == 0 || site > sites {
            return Err(invalid("initial.site", format!("must be in 1..={sites}")));
        }

        let output = cfg.output.get_or_insert_with(Default::default);
        let directory = output.directory.get_or_insert_with(|| PathBuf::from("out")).clone();
        let mut formats = output.formats.get_or_insert_with(|| vec![Format::Csv, Format::Json, Format::Svg]).clone();
        formats.sort();
        formats.dedup();
        output.formats = Some(formats.clone());
        let definition = *output.ipn_definition.get_or_insert(IpnDefinition::default());
        let normalization = *output.ipn_normalization.get_or_insert(IpnNormalization::default());

        let run = RunOptions {
            initial_site: site - 1,
            definition,
            normalization,
            engine: EngineOptions { dt, lindblad },
        };

        let k_points = *cfg.bands.get_or_insert_with(Default::default).k_points.get_or_insert(DEFAULT_K_POINTS);
        if k_points < 2 {
            return Err(invalid("bands.k_points", "must be >= 2"));
        }

        let ensemble = if dmode == DisorderModeName::Ensemble {
            let d = cfg.disorder.as_ref().expect("filled above");
            let e = EnsembleSpec::new(spec.clone(), d.delta_max.unwrap_or(0.0), d.reps.unwrap_or(0), seed)
                .map_err(|e| invalid("disorder", e))?;
            Some(e)
        } else {
            None
        };
        if command == Command::Ensemble && ensemble.is_none() {
            return Err(invalid("disorder.mode", "the ensemble command needs mode = \"ensemble\""));
        }
        if matches!(command, Command::Evolve | Command::Lindblad | Command::Sweep) && ensemble.is_some() {
            return Err(invalid("disorder.mode", "ensemble disorder is only used by the ensemble command"));
        }

        let axes = if command == Command::Sweep {
            let sweep = cfg.sweep.get_or_insert_with(Default::default);
            let x = resolve_axis(sweep.axis_x.get_or_insert_with(Default::default), AxisName::Phi, coupling, "sweep.axis_x")?;
            let y = resolve_axis(sweep.axis_y.get_or_insert_with(Default::default), AxisName::Delta, coupling, "sweep.axis_y")?;
            Some((x, y))
        } else {
            None
        };

        Ok(Resolved {
            command,
            config: cfg,
            spec,
            family,
            grid,
            run,
            ensemble,
            axes,
            k_points,
            directory,
            formats,
            seed,
        })
    }
}

fn resolve_axis(section: &mut AxisSection, default: AxisName, coupling: f64, path: &str) -> Result<Axis, ConfigError> {
    let name = *section.name.get_or_insert(default);
    let points = *section.points.get_or_insert(DEFAULT_SWEEP_POINTS);
    let defaults = Axis::default_for(name, coupling, points.max(2)).map_err(|e| invalid(path, e))?;
    let min = *section.min.get_or_insert(defaults.min);
    let max = *section.max.get_or_insert(defaults.max);
    Axis::new(name, min, max, points).map_err(|e| invalid(path, e))
}

/// Flat map of `section.key` to value, for documentation and tests.
pub fn describe(config: &RunConfig) -> BTreeMap<String, String> {
    fn walk(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
        match value {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    let value = toml::Value::try_from(config).expect("config serializes");
    walk("", &value, &mut out);
    out
}
