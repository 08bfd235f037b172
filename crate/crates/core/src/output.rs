//! On-disk formats. Every file is written atomically (temp file in the
//! target directory, then rename). Floats use Rust's shortest round-trip
//! representation, so re-reading a CSV value reproduces the `f64` exactly.
//!
//! Heatmap SVGs use a monotone five-stop ramp (dark purple, blue, teal,
//! green, yellow) interpolated linearly in RGB between the minimum and
//! maximum finite value; `NaN` cells are grey.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::diagnostics::IpnSeries;
use crate::dynamics::Trajectory;
use crate::ensemble::{SigmaCurve, SweepGrid};
use crate::spectra::BandStructure;

/// Shortest string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Write `bytes` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn row(out: &mut String, values: impl IntoIterator<Item = String>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        out.push_str(&v);
        first = false;
    }
    out.push('\n');
}

fn site_header(sites: usize, virtual_column: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=sites).map(|i| format!("site_{i}")).collect();
    if virtual_column {
        h.push("virtual".into());
    }
    h
}

/// `t, site_1 .. site_D[, virtual], norm`.
pub fn trajectory_csv(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    let open = trajectory.virtual_population.is_some();
    let mut header = vec!["t".to_string()];
    header.extend(site_header(trajectory.sites(), open));
    header.push("norm".into());
    row(&mut out, header);
    for (k, t) in trajectory.grid.times().into_iter().enumerate() {
        let mut values = vec![fmt_f64(t)];
        values.extend(trajectory.full_populations(k).into_iter().map(fmt_f64));
        values.push(fmt_f64(trajectory.norm[k]));
        row(&mut out, values);
    }
    out
}

/// `t, ipn[, <extra name>]`.
pub fn ipn_csv(series: &IpnSeries, extra: Option<(&str, &[f64])>) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string(), "ipn".to_string()];
    if let Some((name, _)) = extra {
        header.push(name.to_string());
    }
    row(&mut out, header);
    for (k, t) in series.times().into_iter().enumerate() {
        let mut values = vec![fmt_f64(t), fmt_f64(series.values[k])];
        if let Some((_, e)) = extra {
            values.push(fmt_f64(e[k]));
        }
        row(&mut out, values);
    }
    out
}

/// `t, site_1 .. site_D[, virtual]`, one row per sample.
pub fn heatmap_csv(matrix: &Array2<f64>, times: &[f64], virtual_column: bool) -> String {
    let mut out = String::new();
    let sites = matrix.ncols() - usize::from(virtual_column);
    let mut header = vec!["t".to_string()];
    header.extend(site_header(sites, virtual_column));
    row(&mut out, header);
    for (r, t) in matrix.rows().into_iter().zip(times) {
        row(&mut out, std::iter::once(fmt_f64(*t)).chain(r.iter().map(|&v| fmt_f64(v))));
    }
    out
}

/// `k, band_1 .. band_{N+1}` with bands in ascending order.
pub fn bands_csv(bands: &BandStructure) -> String {
    let mut out = String::new();
    let nb = bands.energies.first().map_or(0, Vec::len);
    row(&mut out, std::iter::once("k".to_string()).chain((1..=nb).map(|b| format!("band_{b}"))));
    for (k, e) in bands.k_grid.iter().zip(&bands.energies) {
        row(&mut out, std::iter::once(fmt_f64(*k)).chain(e.iter().map(|&v| fmt_f64(v))));
    }
    out
}

/// Two header rows (`axis_x,<name>,x_1..` and `axis_y,<name>,y_1..`), then
/// one row of sigma per `y` value with one column per `x` value.
pub fn sweep_csv(sweep: &SweepGrid) -> String {
    let mut out = String::new();
    for (label, axis) in [("axis_x", &sweep.axis_x), ("axis_y", &sweep.axis_y)] {
        row(
            &mut out,
            [label.to_string(), axis.name.as_str().to_string()].into_iter().chain(axis.values().into_iter().map(fmt_f64)),
        );
    }
    for r in sweep.sigma.rows() {
        row(&mut out, r.iter().map(|&v| fmt_f64(v)));
    }
    out
}

/// `<axis>, sigma`.
pub fn curve_csv(curve: &SigmaCurve) -> String {
    let mut out = String::new();
    row(&mut out, [curve.axis.name.as_str().to_string(), "sigma".to_string()]);
    for (x, s) in curve.axis.values().into_iter().zip(&curve.sigma) {
        row(&mut out, [fmt_f64(x), fmt_f64(*s)]);
    }
    out
}

const RAMP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

/// Ramp colour for `u` in `[0, 1]`.
pub fn colormap(u: f64) -> (u8, u8, u8) {
    let u = if u.is_finite() { u.clamp(0.0, 1.0) } else { 0.0 };
    let pos = u * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Axis annotation for [`heatmap_svg`].
#[derive(Clone, Debug)]
pub struct SvgAxis {
    pub label: String,
    pub min: f64,
    pub max: f64,
}

/// Raster heatmap: `matrix[r][c]` is drawn at column `c` (left to right)
/// and row `r` (bottom to top).
pub fn heatmap_svg(matrix: &Array2<f64>, x: &SvgAxis, y: &SvgAxis, title: &str) -> String {
    let (rows, cols) = matrix.dim();
    let (left, top, plot_w, plot_h) = (70.0, 30.0, 600.0, 400.0);
    let (cw, ch) = (plot_w / cols.max(1) as f64, plot_h / rows.max(1) as f64);
    let finite = matrix.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut s = String::new();
    let width = left + plot_w + 110.0;
    let height = top + plot_h + 60.0;
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, left + plot_w / 2.0, escape(title));
    let _ = writeln!(s, r#"<g shape-rendering="crispEdges">"#);
    for ((r, c), &v) in matrix.indexed_iter() {
        let fill = if v.is_finite() {
            let (red, g, b) = colormap((v - lo) / span);
            format!("#{red:02x}{g:02x}{b:02x}")
        } else {
            "#808080".to_string()
        };
        let px = left + c as f64 * cw;
        let py = top + plot_h - (r + 1) as f64 * ch;
        let _ = writeln!(s, r#"<rect x="{px:.3}" y="{py:.3}" width="{:.3}" height="{:.3}" fill="{fill}"/>"#, cw + 0.05, ch + 0.05);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);
    let by = top + plot_h;
    let _ = writeln!(s, r#"<text x="{left}" y="{}" text-anchor="start">{}</text>"#, by + 16.0, short(x.min));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left + plot_w, by + 16.0, short(x.max));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + plot_w / 2.0, by + 36.0, escape(&x.label));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, by, short(y.min));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, top + 10.0, short(y.max));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(&y.label)
    );
    let bar_x = left + plot_w + 20.0;
    for i in 0..100 {
        let (red, g, b) = colormap(i as f64 / 99.0);
        let py = top + plot_h - (i + 1) as f64 * plot_h / 100.0;
        let _ = writeln!(s, r##"<rect x="{bar_x}" y="{py:.3}" width="16" height="{:.3}" fill="#{red:02x}{g:02x}{b:02x}"/>"##, plot_h / 100.0 + 0.05);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bar_x + 20.0, top + 10.0, short(if hi.is_finite() { hi } else { 0.0 }));
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bar_x + 20.0, top + plot_h, short(if lo.is_finite() { lo } else { 0.0 }));
    s.push_str("</svg>\n");
    s
}

fn short(x: f64) -> String {
    format!("{x:.4}").trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Deterministic run record. Wall time and thread count are kept out so
/// reruns reproduce it byte for byte.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub rng: &'static str,
    pub config: &'a crate::config::RunConfig,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

impl Manifest<'_> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
