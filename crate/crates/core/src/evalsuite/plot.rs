//! Static SVG plots: learning curves, success-rate bars and the
//! force-distance profile.
//!
//! Output is a pure function of the input: fixed number formatting, no
//! timestamps, no random ids. Axis ranges are padded by 5% of the data span
//! and written as `data-x-min` style attributes on the root element so
//! tests and scripts can read them back.

use std::fmt::Write as _;
use std::path::Path;

use super::profile::ForceProfile;
use super::{ComparisonTable, EvalError};
use crate::ppo::CurvePoint;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 48.0;
pub const AXIS_PAD: f64 = 0.05;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    /// Data extrema padded by 5% of the span; a zero span gets a unit pad.
    pub fn padded(lo: f64, hi: f64) -> Self {
        let span = hi - lo;
        let pad = if span > 0.0 { AXIS_PAD * span } else { 0.5 };
        Self {
            min: lo - pad,
            max: hi + pad,
        }
    }

    fn map(&self, v: f64, a: f64, b: f64) -> f64 {
        a + (v - self.min) / (self.max - self.min) * (b - a)
    }
}

fn extent(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    vals.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(svg: &mut String, title: &str, x: AxisRange, y: AxisRange) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-x-min="{:.6}" data-x-max="{:.6}" data-y-min="{:.6}" data-y-max="{:.6}">"#,
        x.min, x.max, y.min, y.max
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, x: AxisRange, y: AxisRange, xlabel: &str, ylabel: &str, x_ticks: bool) {
    let (l, r, t, b) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);
    let _ = writeln!(svg, r#"<rect x="{l}" y="{t}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, r - l, b - t);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y.min + f * (y.max - y.min);
        let py = y.map(yv, b, t);
        let _ = writeln!(
            svg,
            r##"<line x1="{l}" y1="{py:.2}" x2="{r}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.1}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"##,
            l - 4.0,
            py + 3.0,
            tick(yv)
        );
        if x_ticks {
            let xv = x.min + f * (x.max - x.min);
            let px = x.map(xv, l, r);
            let _ = writeln!(
                svg,
                r#"<text x="{px:.2}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
                b + 14.0,
                tick(xv)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Line chart of one or more series. Returns `None` (and logs a warning)
/// when there is nothing to draw.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Option<String> {
    let drawn: Vec<&Series> = series
        .iter()
        .filter(|s| {
            if s.points.is_empty() {
                log::warn!("plot '{title}': series '{}' is empty, skipped", s.label);
            }
            !s.points.is_empty()
        })
        .collect();
    let xs = extent(drawn.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let ys = extent(drawn.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (Some((x0, x1)), Some((y0, y1))) = (xs, ys) else {
        log::warn!("plot '{title}': no data, nothing written");
        return None;
    };
    let x = AxisRange::padded(x0, x1);
    let y = AxisRange::padded(y0, y1);
    let mut svg = String::new();
    header(&mut svg, title, x, y);
    axes(&mut svg, x, y, xlabel, ylabel, true);
    let (l, r, t, b) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);
    for (k, s) in drawn.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(px, py)| format!("{:.2},{:.2}", x.map(px, l, r), y.map(py, b, t)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}" data-label="{}"/>"#,
            pts.join(" "),
            escape(&s.label)
        );
        let ly = t + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10">{}</text>"#,
            r - 110.0,
            r - 90.0,
            r - 85.0,
            ly + 3.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

/// Grouped bars: one group per category, one bar per series entry.
pub fn bar_chart(title: &str, ylabel: &str, categories: &[String], groups: &[(String, Vec<f64>)]) -> Option<String> {
    if categories.is_empty() || groups.iter().all(|g| g.1.iter().all(|v| !v.is_finite())) {
        log::warn!("plot '{title}': no data, nothing written");
        return None;
    }
    let (lo, hi) = extent(groups.iter().flat_map(|g| g.1.iter().copied())).unwrap_or((0.0, 0.0));
    let x = AxisRange::padded(0.0, categories.len() as f64);
    let y = AxisRange::padded(lo.min(0.0), hi.max(0.0));
    let mut svg = String::new();
    header(&mut svg, title, x, y);
    axes(&mut svg, x, y, "", ylabel, false);
    let (l, r, t, b) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);
    let ng = groups.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let cx = x.map(c as f64 + 0.5, l, r);
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            b + 14.0,
            escape(cat)
        );
        for (g, (label, vals)) in groups.iter().enumerate() {
            let Some(&v) = vals.get(c).filter(|v| v.is_finite()) else { continue };
            let x0 = x.map(c as f64 + 0.1 + 0.8 * g as f64 / ng, l, r);
            let x1 = x.map(c as f64 + 0.1 + 0.8 * (g + 1) as f64 / ng, l, r);
            let (y0, y1) = (y.map(0.0, b, t), y.map(v, b, t));
            let _ = writeln!(
                svg,
                r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" data-label="{}" data-value="{v}"/>"#,
                y0.min(y1),
                x1 - x0,
                (y1 - y0).abs(),
                COLORS[g % COLORS.len()],
                escape(label)
            );
        }
    }
    for (g, (label, _)) in groups.iter().enumerate() {
        let ly = t + 14.0 + 14.0 * g as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10">{}</text>"#,
            r - 60.0,
            ly - 8.0,
            COLORS[g % COLORS.len()],
            r - 45.0,
            ly + 1.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

pub fn curve_plot(title: &str, curves: &[(String, Vec<CurvePoint>)]) -> Option<String> {
    let series: Vec<Series> = curves
        .iter()
        .map(|(label, pts)| Series {
            label: label.clone(),
            points: pts.iter().map(|p| (p.timestep as f64, p.mean_reward)).collect(),
        })
        .collect();
    line_chart(title, "timestep", "mean episode reward", &series)
}

/// SR bars per variant, one bar per policy; absent cells are left out.
pub fn sr_bars(table: &ComparisonTable) -> Option<String> {
    let cats: Vec<String> = table.variants.iter().map(|v| v.name().to_string()).collect();
    let groups: Vec<(String, Vec<f64>)> = table
        .policies
        .iter()
        .map(|p| {
            let vals = table.variants.iter().map(|v| table.cell(*p, *v).map_or(f64::NAN, |r| r.sr)).collect();
            (p.name().to_string(), vals)
        })
        .collect();
    bar_chart("Success rate by environment", "SR (%)", &cats, &groups)
}

pub fn profile_plot(profile: &ForceProfile) -> Option<String> {
    let pair = |v: &[f64]| profile.progress.iter().copied().zip(v.iter().copied()).collect();
    line_chart(
        &format!("Force and distance along successful trajectories (rank corr {:.3})", profile.correlation),
        "normalized progress",
        "normalized value",
        &[
            Series {
                label: "force".into(),
                points: pair(&profile.mean_force),
            },
            Series {
                label: "distance".into(),
                points: pair(&profile.mean_distance),
            },
        ],
    )
}

/// Writes `svg` if present; returns whether a file was written.
pub fn write_plot(svg: Option<String>, path: &Path) -> Result<bool, EvalError> {
    match svg {
        Some(s) => {
            std::fs::write(path, s).map_err(|source| EvalError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(true)
        }
        None => {
            log::warn!("{}: nothing to plot, file not written", path.display());
            Ok(false)
        }
    }
}

/// Reads the axis ranges back out of a plot written by this module.
pub fn parse_axes(svg: &str) -> Option<(AxisRange, AxisRange)> {
    let attr = |name: &str| -> Option<f64> {
        let key = format!("{name}=\"");
        let start = svg.find(&key)? + key.len();
        let end = start + svg[start..].find('"')?;
        svg[start..end].parse().ok()
    };
    Some((
        AxisRange {
            min: attr("data-x-min")?,
            max: attr("data-x-max")?,
        },
        AxisRange {
            min: attr("data-y-min")?,
            max: attr("data-y-max")?,
        },
    ))
}
