//! Plot-ready output: gnuplot data blocks and a standalone SVG line chart.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    /// Output file stem.
    pub name: String,
    pub title: String,
    /// Column plotted on the horizontal axis.
    #[serde(default = "default_x")]
    pub x: String,
    /// Column plotted on the vertical axis.
    pub y: String,
    #[serde(default)]
    pub log_x: bool,
    #[serde(default)]
    pub log_y: bool,
    /// Horizontal reference lines `(label, value)`.
    #[serde(default)]
    pub hlines: Vec<(String, f64)>,
}

fn default_x() -> String {
    "t".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Read columns `x` and `y` from a run CSV. Rows with an empty `y` cell are
/// skipped.
pub fn read_series(path: &Path, label: &str, x: &str, y: &str) -> Result<Series> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    let mut points = Vec::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        rows += 1;
        let cell = |i: usize, name: &str| -> Result<Option<f64>> {
            match rec.get(i) {
                None => Err(Error::Schema(name.to_string())),
                Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| Error::Schema(name.to_string())),
            }
        };
        if let (Some(a), Some(b)) = (cell(ix, x)?, cell(iy, y)?) {
            points.push((a, b));
        }
    }
    if rows == 0 {
        return Err(Error::Data(format!("{}: empty CSV", path.display())));
    }
    Ok(Series {
        label: label.to_string(),
        points,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Write `<name>.dat` and `<name>.svg` into `out_dir` for the given
/// `(label, csv path)` inputs. Nothing is written if any input fails.
pub fn emit_plot_data(inputs: &[(String, PathBuf)], spec: &PlotSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no plot inputs".into()));
    }
    let series = inputs
        .iter()
        .map(|(label, path)| read_series(path, label, &spec.x, &spec.y))
        .collect::<Result<Vec<_>>>()?;
    let dat = gnuplot_blocks(&series, spec);
    let svg = render_svg(&series, spec);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dat_path = out_dir.join(format!("{}.dat", spec.name));
    let svg_path = out_dir.join(format!("{}.svg", spec.name));
    fs::write(&dat_path, dat).map_err(|e| Error::io(&dat_path, e))?;
    fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok(vec![dat_path, svg_path])
}

/// One block per series, separated by two blank lines (gnuplot `index`).
pub fn gnuplot_blocks(series: &[Series], spec: &PlotSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}", spec.title);
    for (k, s) in series.iter().enumerate() {
        if k > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# index {k}: {}", s.label);
        let _ = writeln!(out, "# {} {}", spec.x, spec.y);
        for &(x, y) in &s.points {
            let _ = writeln!(out, "{x} {y}");
        }
    }
    out
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        }
        Self { lo, hi, log }
    }

    fn map(&self, v: f64) -> Option<f64> {
        if self.log && v <= 0.0 {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let step = ((self.hi - self.lo) / 8.0).ceil().max(1.0);
            let mut out = Vec::new();
            let mut e = self.lo;
            while e <= self.hi + 1e-9 {
                out.push(((e - self.lo) / (self.hi - self.lo), format!("1e{}", e as i64)));
                e += step;
            }
            out
        } else {
            (0..=4)
                .map(|k| {
                    let f = k as f64 / 4.0;
                    (f, format!("{:.3}", self.lo + f * (self.hi - self.lo)))
                })
                .collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(series: &[Series], spec: &PlotSpec) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 180.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xa = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), spec.log_x);
    let ya = Axis::fit(
        series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(spec.hlines.iter().map(|l| l.1)),
        spec.log_y,
    );
    let px = |f: f64| left + f * pw;
    let py = |f: f64| top + (1.0 - f) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (f, label) in xa.ticks() {
        let x = px(f);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{top}" x2="{x:.1}" y2="{}" stroke="#ddd"/><text x="{x:.1}" y="{}" text-anchor="middle">{label}</text>"##,
            top + ph,
            top + ph + 18.0
        );
    }
    for (f, label) in ya.ticks() {
        let y = py(f);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{label}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(&spec.x)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&spec.y)
    );
    let mut legend = 0usize;
    let mut legend_entry = |svg: &mut String, color: &str, label: &str, dashed: bool| {
        let y = top + 10.0 + 18.0 * legend as f64;
        let x = left + pw + 12.0;
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            x + 24.0,
            x + 30.0,
            y + 4.0,
            escape(label)
        );
        legend += 1;
    };
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter_map(|&(x, y)| Some(format!("{:.2},{:.2}", px(xa.map(x)?), py(ya.map(y)?))))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        legend_entry(&mut svg, color, &s.label, false);
    }
    for (k, (label, value)) in spec.hlines.iter().enumerate() {
        let color = COLORS[(series.len() + k) % COLORS.len()];
        if let Some(f) = ya.map(*value) {
            let y = py(f);
            let _ = writeln!(
                svg,
                r#"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="{color}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                left + pw
            );
        }
        legend_entry(&mut svg, color, label, true);
    }
    svg.push_str("</svg>\n");
    svg
}
