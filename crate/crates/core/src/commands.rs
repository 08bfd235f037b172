//! The six subcommands. Each one writes its data files plus `manifest.json`
//! (deterministic) and `timing.log` (wall time, worker count).

use std::path::PathBuf;
use std::time::Instant;

use serde_json::json;

use crate::config::{Command, Format, Resolved};
use crate::diagnostics::{self, IpnNormalization, IpnSeries};
use crate::dynamics::{evolve_uniform_decay, Engine, LindbladEngine, Wavefunction};
use crate::ensemble::{self, RNG_ALGORITHM};
use crate::model::{build_real_hamiltonian, FLAT_BAND_TOL};
use crate::output::{self, fmt_f64, heatmap_svg, Manifest, SvgAxis};
use crate::spectra;
use crate::Error;

/// Populations above this count as support in summaries.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    /// Human-readable report, one line each.
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    /// Sweep points that failed (`NaN` in the output).
    pub failed_points: usize,
}

impl Outcome {
    /// 0 on success, 3 when a sweep has failed points.
    pub fn exit_code(&self) -> i32 {
        if self.failed_points > 0 {
            3
        } else {
            0
        }
    }
}

struct Sink<'a> {
    resolved: &'a Resolved,
    names: Vec<String>,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, format: Format, content: impl FnOnce() -> String) -> Result<(), Error> {
        if !self.resolved.wants(format) {
            return Ok(());
        }
        let path = self.resolved.directory.join(name);
        output::write_atomic(&path, content().as_bytes()).map_err(|source| Error::Io { path: path.clone(), source })?;
        self.names.push(name.to_string());
        Ok(())
    }
}

/// Run the resolved command on `threads` workers (all cores when `None`).
pub fn execute(resolved: &Resolved, threads: Option<usize>) -> Result<Outcome, Error> {
    let start = Instant::now();
    let mut sink = Sink { resolved, names: Vec::new() };
    let (lines, summary, failed_points) =
        ensemble::with_threads(threads, || dispatch(resolved, &mut sink)).map_err(Error::Ensemble)??;

    let dir = &resolved.directory;
    let manifest_name = "manifest.json";
    let mut outputs = sink.names.clone();
    outputs.push(manifest_name.to_string());
    // where the files went is not part of the result
    let mut echo = resolved.config.clone();
    if let Some(out) = echo.output.as_mut() {
        out.directory = None;
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: resolved.command.as_str(),
        seed: resolved.seed,
        rng: RNG_ALGORITHM,
        config: &echo,
        outputs,
        summary,
    };
    let path = dir.join(manifest_name);
    output::write_atomic(&path, manifest.to_json().as_bytes()).map_err(|source| Error::Io { path, source })?;

    let workers = ensemble::with_threads(threads, rayon::current_num_threads).map_err(Error::Ensemble)?;
    let timing = format!(
        "command {}\nwall_seconds {:.6}\nthreads {}\n",
        resolved.command.as_str(),
        start.elapsed().as_secs_f64(),
        workers
    );
    let path = dir.join("timing.log");
    output::write_atomic(&path, timing.as_bytes()).map_err(|source| Error::Io { path, source })?;

    let mut files: Vec<PathBuf> = sink.names.iter().map(|n| dir.join(n)).collect();
    files.push(dir.join(manifest_name));
    files.push(dir.join("timing.log"));
    Ok(Outcome { lines, files, failed_points })
}

type Report = (Vec<String>, serde_json::Value, usize);

fn dispatch(r: &Resolved, sink: &mut Sink<'_>) -> Result<Report, Error> {
    match r.command {
        Command::Check => check(r, sink),
        Command::Bands => bands(r, sink),
        Command::Evolve | Command::Lindblad => evolve(r, sink),
        Command::Ensemble => ensemble_cmd(r, sink),
        Command::Sweep => sweep(r, sink),
    }
}

fn check(r: &Resolved, sink: &mut Sink<'_>) -> Result<Report, Error> {
    let flux = r.spec.flux();
    let (sc, ss) = flux.residuals();
    let pass = flux.is_flat_band(FLAT_BAND_TOL);
    let phases: Vec<String> = flux.phases().iter().map(|&p| fmt_f64(p)).collect();
    let mut lines = vec![
        format!("paths          {}", flux.paths()),
        format!("phases         [{}]", phases.join(", ")),
        format!("sum cos        {}", fmt_f64(sc)),
        format!("sum sin        {}", fmt_f64(ss)),
        format!("flat band      {}", if pass { "pass" } else { "fail" }),
    ];
    let caging = match r.family {
        Some(ensemble::FluxFamily::OddSymmetric) => {
            let phi = crate::model::caging_angle_odd(flux.paths())?;
            lines.push(format!("caging flux    phi = arccos(-1/{}) = {}", flux.paths() - 1, fmt_f64(phi)));
            json!({ "family": "odd_symmetric", "phi": phi })
        }
        Some(ensemble::FluxFamily::EvenSymmetric { m }) => {
            lines.push(format!("caging flux    any phi with second half shifted by {m} pi"));
            json!({ "family": "even_symmetric", "m": m })
        }
        None => json!(null),
    };
    let summary = json!({
        "phases": flux.phases(),
        "sum_cos": sc,
        "sum_sin": ss,
        "flat_band": pass,
        "tolerance": FLAT_BAND_TOL,
        "caging": caging,
    });
    sink.write("check.json", Format::Json, || format!("{}\n", serde_json::to_string_pretty(&summary).unwrap()))?;
    Ok((lines, summary, 0))
}

fn bands(r: &Resolved, sink: &mut Sink<'_>) -> Result<Report, Error> {
    let b = spectra::band_structure(r.spec.flux(), r.spec.coupling(), r.k_points)?;
    let top: Vec<f64> = b.top_band().collect();
    let (lo, hi) = top.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), &e| (a.min(e), c.max(e)));
    let lines = vec![
        format!("k points       {}", r.k_points),
        format!("top band       min {} max {}", fmt_f64(lo), fmt_f64(hi)),
        format!("flatness       {}", fmt_f64(b.flatness)),
    ];
    sink.write("bands.csv", Format::Csv, || output::bands_csv(&b))?;
    let summary = json!({ "k_points": r.k_points, "flatness": b.flatness, "top_band_min": lo, "top_band_max": hi });
    Ok((lines, summary, 0))
}

fn site_axis(sites: usize, open: bool) -> SvgAxis {
    let label = if open { "site index (last column: sink)" } else { "site index" };
    SvgAxis { label: label.into(), min: 1.0, max: (sites + usize::from(open)) as f64 }
}

fn time_axis(r: &Resolved) -> SvgAxis {
    SvgAxis { label: "t (pi/J)".into(), min: 0.0, max: r.grid.t_max() }
}

fn fluctuation_json(series: &IpnSeries) -> Result<serde_json::Value, Error> {
    let f = series.fluctuation()?;
    Ok(json!({ "mean_ipn": f.mean_ipn, "mean_sq_ipn": f.mean_sq_ipn, "sigma": f.sigma }))
}

fn evolve(r: &Resolved, sink: &mut Sink<'_>) -> Result<Report, Error> {
    let (trajectory, ipn) = ensemble::run_point(&r.spec, &r.grid, &r.run)?;
    let geometry = r.spec.geometry();
    let open = trajectory.virtual_population.is_some();
    let map = diagnostics::heatmap(&trajectory);
    let times = r.grid.times();

    // non-Hermitian runs carry the other normalization alongside
    let alternate = if !r.spec.is_hermitian() {
        let other = match r.run.normalization {
            IpnNormalization::Raw => IpnNormalization::Renormalized,
            IpnNormalization::Renormalized => IpnNormalization::Raw,
        };
        let name = match other {
            IpnNormalization::Raw => "ipn_raw",
            IpnNormalization::Renormalized => "ipn_renormalized",
        };
        Some((name, IpnSeries::from_trajectory(&trajectory, &geometry, r.run.definition, other)?.values))
    } else {
        None
    };

    let mut summary = json!({
        "engine": trajectory.engine,
        "sites": trajectory.sites(),
        "samples": trajectory.samples(),
        "initial_site": r.run.initial_site + 1,
        "ipn_definition": ipn.definition,
        "ipn_normalization": ipn.normalization,
        "final_ipn": ipn.values.last(),
        "final_norm": trajectory.norm.last(),
        "fluctuation": fluctuation_json(&ipn)?,
        "support": diagnostics::support_range(&trajectory.populations, SUPPORT_THRESHOLD),
    });
    let mut lines = vec![
        format!("engine         {}", serde_json::to_value(trajectory.engine).unwrap().as_str().unwrap_or("?")),
        format!("final ipn      {}", fmt_f64(*ipn.values.last().unwrap())),
        format!("final norm     {}", fmt_f64(*trajectory.norm.last().unwrap())),
    ];
    if let Some((lo, hi)) = diagnostics::support_range(&trajectory.populations, SUPPORT_THRESHOLD) {
        lines.push(format!("support        sites {lo}..{hi} (population > {SUPPORT_THRESHOLD:e})"));
    }

    if let Some(sinkpop) = &trajectory.virtual_population {
        let last = *sinkpop.last().unwrap();
        summary["final_virtual_population"] = json!(last);
        lines.push(format!("sink           {}", fmt_f64(last)));
        if trajectory.engine == Engine::Lindblad && r.run.engine.lindblad == LindbladEngine::Full {
            let h = build_real_hamiltonian(&r.spec)?;
            let psi0 = Wavefunction::single_site(r.spec.site_count(), r.run.initial_site)?;
            let oracle = evolve_uniform_decay(&h, r.spec.gamma_diss(), &psi0, &r.grid)?;
            let dev = (&trajectory.populations - &oracle.populations).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
            summary["uniform_decay_max_deviation"] = json!(dev);
            lines.push(format!("uniform decay  max |full - closed form| = {dev:e}"));
        }
    }

    sink.write("trajectory.csv", Format::Csv, || output::trajectory_csv(&trajectory))?;
    let extra = alternate.as_ref().map(|(n, v)| (*n, v.as_slice()));
    sink.write("ipn.csv", Format::Csv, || output::ipn_csv(&ipn, extra))?;
    sink.write("heatmap.csv", Format::Csv, || output::heatmap_csv(&map, &times, open))?;
    sink.write("heatmap.svg", Format::Svg, || {
        heatmap_svg(&map, &site_axis(trajectory.sites(), open), &time_axis(r), "population")
    })?;
    sink.write("result.json", Format::Json, || {
        let body = json!({ "t": times, "ipn": ipn.values, "norm": trajectory.norm, "summary": summary });
        format!("{}\n", serde_json::to_string_pretty(&body).unwrap())
    })?;
    Ok((lines, summary, 0))
}

fn ensemble_cmd(r: &Resolved, sink: &mut Sink<'_>) -> Result<Report, Error> {
    let spec = r.ensemble.as_ref().expect("resolved ensemble");
    let avg = ensemble::ensemble_average(spec, &r.grid, &r.run)?;
    let times = r.grid.times();
    let open = r.spec.gamma_diss() > 0.0;
    let summary = json!({
        "reps": spec.reps(),
        "delta_max": spec.delta_max(),
        "seed": spec.seed(),
        "final_mean_ipn": avg.mean_ipn.values.last(),
        "mean_ipn_settles_below_half_at": avg.mean_ipn.settles_below(0.5),
        "fluctuation": fluctuation_json(&avg.mean_ipn)?,
    });
    let lines = vec![
        format!("realizations   {} (seed {}, delta_max {})", spec.reps(), spec.seed(), fmt_f64(spec.delta_max())),
        format!("final mean ipn {}", fmt_f64(*avg.mean_ipn.values.last().unwrap())),
    ];
    sink.write("mean_ipn.csv", Format::Csv, || output::ipn_csv(&avg.mean_ipn, None))?;
    sink.write("mean_heatmap.csv", Format::Csv, || output::heatmap_csv(&avg.mean_heatmap, &times, open))?;
    sink.write("mean_heatmap.svg", Format::Svg, || {
        heatmap_svg(&avg.mean_heatmap, &site_axis(r.spec.site_count(), open), &time_axis(r), "mean population")
    })?;
    sink.write("result.json", Format::Json, || {
        let body = json!({ "t": times, "mean_ipn": avg.mean_ipn.values, "summary": summary });
        format!("{}\n", serde_json::to_string_pretty(&body).unwrap())
    })?;
    Ok((lines, summary, 0))
}

fn sweep(r: &Resolved, sink: &mut Sink<'_>) -> Result<Report, Error> {
    let (x, y) = r.axes.clone().expect("resolved axes");
    let grid = ensemble::sweep_sigma(&r.sweep_base(), &x, &y, &r.grid, &r.run)?;
    let failures: Vec<serde_json::Value> = grid
        .status
        .indexed_iter()
        .filter_map(|((row, col), s)| match s {
            ensemble::PointStatus::Failed { message } => {
                Some(json!({ "row": row, "col": col, x.name.as_str(): x.values()[col], y.name.as_str(): y.values()[row], "message": message }))
            }
            ensemble::PointStatus::Ok { .. } => None,
        })
        .collect();
    let argmax = grid.argmax().map(|(row, col)| {
        json!({ "row": row, "col": col, x.name.as_str(): x.values()[col], y.name.as_str(): y.values()[row], "sigma": grid.sigma[[row, col]] })
    });
    let mut engines: Vec<Engine> = grid
        .status
        .iter()
        .filter_map(|s| match s {
            ensemble::PointStatus::Ok { engine } => Some(*engine),
            _ => None,
        })
        .collect();
    engines.sort_by_key(|e| format!("{e:?}"));
    engines.dedup();
    let summary = json!({
        "points": x.points * y.points,
        "failed_points": grid.failed_points(),
        "fast_path_used": grid.fast_path_used(),
        "engines": engines,
        "argmax": argmax,
        "failures": failures,
    });
    let mut lines = vec![format!(
        "grid           {} x {} ({} x {})",
        x.points,
        y.points,
        x.name.as_str(),
        y.name.as_str()
    )];
    if let Some((row, col)) = grid.argmax() {
        lines.push(format!(
            "max sigma      {} at {} = {}, {} = {}",
            fmt_f64(grid.sigma[[row, col]]),
            x.name.as_str(),
            fmt_f64(x.values()[col]),
            y.name.as_str(),
            fmt_f64(y.values()[row])
        ));
    }
    if grid.fast_path_used() {
        lines.push("uniform-decay closed form used for dissipative points".into());
    }
    if grid.failed_points() > 0 {
        lines.push(format!("failed points  {} (NaN in output)", grid.failed_points()));
    }
    sink.write("sweep.csv", Format::Csv, || output::sweep_csv(&grid))?;
    sink.write("sweep.svg", Format::Svg, || {
        let ax = SvgAxis { label: x.name.as_str().into(), min: x.min, max: x.max };
        let ay = SvgAxis { label: y.name.as_str().into(), min: y.min, max: y.max };
        heatmap_svg(&grid.sigma, &ax, &ay, "IPN fluctuation sigma")
    })?;
    sink.write("result.json", Format::Json, || {
        let sigma: Vec<Vec<Option<f64>>> =
            grid.sigma.rows().into_iter().map(|r| r.iter().map(|&v| v.is_finite().then_some(v)).collect()).collect();
        let body = json!({ "x": x.values(), "y": y.values(), "sigma": sigma, "summary": summary });
        format!("{}\n", serde_json::to_string_pretty(&body).unwrap())
    })?;
    Ok((lines, summary, grid.failed_points()))
}
