//! Aggregates per-seed learning curves into mean ± standard-deviation bands
//! and draws them as a static SVG.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use dealio::dealio::LearningCurve;

/// One row of an aggregated band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPoint {
    pub iteration: usize,
    pub env_transitions: u64,
    pub mean: f64,
    /// Population standard deviation across curves.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<BandPoint>,
}

pub const AGGREGATE_HEADER: &str =
    "series,iteration,env_transitions,mean_normalized_score,std_normalized_score,curves";

/// Curves must share row count and transition accounting.
pub fn aggregate(label: &str, curves: &[LearningCurve]) -> Result<Series> {
    let first = curves.first().context("no curves to aggregate")?;
    for (i, c) in curves.iter().enumerate() {
        ensure!(
            c.len() == first.len(),
            "curve {i} of {label} has {} rows, expected {}",
            c.len(),
            first.len()
        );
        for (a, b) in c.rows.iter().zip(&first.rows) {
            ensure!(
                a.iteration == b.iteration && a.env_transitions == b.env_transitions,
                "curve {i} of {label} disagrees on transition accounting at iteration {}",
                b.iteration
            );
        }
    }
    let count = curves.len() as f64;
    let points = first
        .rows
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let mean = curves
                .iter()
                .map(|c| c.rows[j].normalized_score)
                .sum::<f64>()
                / count;
            let var = curves
                .iter()
                .map(|c| (c.rows[j].normalized_score - mean).powi(2))
                .sum::<f64>()
                / count;
            BandPoint {
                iteration: row.iteration,
                env_transitions: row.env_transitions,
                mean,
                std: var.sqrt(),
                count: curves.len(),
            }
        })
        .collect();
    Ok(Series {
        label: label.to_string(),
        points,
    })
}

/// Splits `label=pattern`; a bare pattern is labelled by itself.
pub fn parse_curve_spec(spec: &str) -> (String, String) {
    match spec.split_once('=') {
        Some((label, pattern)) if !label.is_empty() && !label.contains(['*', '/', '?']) => {
            (label.to_string(), pattern.to_string())
        }
        _ => (spec.to_string(), spec.to_string()),
    }
}

pub fn expand(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .with_context(|| format!("bad glob {pattern:?}"))?
        .collect::<std::result::Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no files match {pattern:?}");
    }
    Ok(paths)
}

pub fn read_curve(path: &Path) -> Result<LearningCurve> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    LearningCurve::read_csv(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
}

pub fn write_aggregate<W: Write>(w: &mut W, series: &[Series]) -> Result<()> {
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for s in series {
        for p in &s.points {
            writeln!(
                w,
                "{},{},{},{:.16e},{:.16e},{}",
                s.label, p.iteration, p.env_transitions, p.mean, p.std, p.count
            )?;
        }
    }
    Ok(())
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 55.0);

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Mean lines with shaded ±1 std bands, score against cumulative transitions.
pub fn render_svg(series: &[Series]) -> String {
    let (ml, mr, mt, mb) = MARGIN;
    let pts = series.iter().flat_map(|s| &s.points);
    let x_max = pts
        .clone()
        .map(|p| p.env_transitions as f64)
        .fold(1.0, f64::max);
    let y_lo = pts.clone().map(|p| p.mean - p.std).fold(0.0, f64::min);
    let y_hi = pts.map(|p| p.mean + p.std).fold(1.0, f64::max);
    let pw = WIDTH - ml - mr;
    let ph = HEIGHT - mt - mb;
    let sx = |x: f64| ml + x / x_max * pw;
    let sy = |y: f64| mt + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for t in nice_ticks(0.0, x_max, 6) {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{mt}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"##,
            mt + ph,
            mt + ph + 16.0
        );
    }
    for t in nice_ticks(y_lo, y_hi, 6) {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{ml}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"##,
            ml + pw,
            ml - 6.0,
            y + 4.0,
            t
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{ml}" y="{mt}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">environment transitions</text>"#,
        ml + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">normalized score</text>"#,
        mt + ph / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper: Vec<String> = s
            .points
            .iter()
            .map(|p| {
                format!(
                    "{:.2},{:.2}",
                    sx(p.env_transitions as f64),
                    sy(p.mean + p.std)
                )
            })
            .collect();
        let lower: Vec<String> = s
            .points
            .iter()
            .rev()
            .map(|p| {
                format!(
                    "{:.2},{:.2}",
                    sx(p.env_transitions as f64),
                    sy(p.mean - p.std)
                )
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.env_transitions as f64), sy(p.mean)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = mt + 18.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ml + pw - 150.0,
            ml + pw - 125.0,
            ml + pw - 120.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
