//! Learning-curve aggregation and rendering. Raw per-episode returns are
//! smoothed with non-overlapping windows, aggregated across seeds into a
//! mean line plus a min–max envelope, and written out twice: a long-format
//! CSV for further analysis and a dependency-free SVG for eyeballs.

use std::fmt::Write as _;

use crate::error::Error;
use crate::Result;

/// Returns of every run (one inner vec per seed) under one label.
#[derive(Debug, Clone)]
pub struct SeriesData {
    pub name: String,
    pub runs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Global episode number of the last episode in the window.
    pub window_end: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct Curve {
    pub name: String,
    pub points: Vec<CurvePoint>,
}

/// Means of consecutive disjoint windows; a trailing partial window is
/// dropped, so a log of `n` episodes yields `n / window` rows.
pub fn window_means(returns: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "smoothing window must be positive");
    returns
        .chunks_exact(window)
        .map(|chunk| chunk.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Smooth every run, truncate to the shortest run of each series, and take
/// mean/min/max across seeds per window.
pub fn aggregate(series: &[SeriesData], window: usize) -> Result<Vec<Curve>> {
    if series.is_empty() {
        return Err(Error::Usage("no episode logs to plot".into()));
    }
    let mut curves = Vec::with_capacity(series.len());
    for s in series {
        if s.runs.is_empty() {
            return Err(Error::Usage(format!("series `{}` has no runs", s.name)));
        }
        let smoothed: Vec<Vec<f64>> = s.runs.iter().map(|r| window_means(r, window)).collect();
        let common = smoothed.iter().map(Vec::len).min().unwrap_or(0);
        if common == 0 {
            return Err(Error::Usage(format!(
                "series `{}` has a run shorter than one window of {window} episodes",
                s.name
            )));
        }
        let points = (0..common)
            .map(|w| {
                let vals = smoothed.iter().map(|run| run[w]);
                let mut mean = 0.0;
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for v in vals.clone() {
                    mean += v;
                    min = min.min(v);
                    max = max.max(v);
                }
                CurvePoint {
                    window_end: ((w + 1) * window) as u64,
                    mean: mean / smoothed.len() as f64,
                    min,
                    max,
                }
            })
            .collect();
        curves.push(Curve { name: s.name.clone(), points });
    }
    Ok(curves)
}

/// Long format: one row per (series, window).
pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("series,window_end,mean,min,max\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(out, "{},{},{},{},{}", c.name, p.window_end, p.mean, p.min, p.max);
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

const W: f64 = 860.0;
const H: f64 = 520.0;
const ML: f64 = 72.0; // left margin (y labels)
const MR: f64 = 24.0;
const MT: f64 = 44.0; // top margin (title)
const MB: f64 = 56.0; // bottom margin (x labels)

/// Render curves as a standalone SVG document: axes with tick labels, one
/// mean polyline and one translucent min–max band per series, and a legend.
pub fn svg_plot(curves: &[Curve], title: &str, window: usize) -> Result<String> {
    if curves.is_empty() || curves.iter().all(|c| c.points.is_empty()) {
        return Err(Error::Usage("no curve data to plot".into()));
    }
    let mut x_hi = 0f64;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for c in curves {
        for p in &c.points {
            x_hi = x_hi.max(p.window_end as f64);
            y_lo = y_lo.min(p.min);
            y_hi = y_hi.max(p.max);
        }
    }
    let x_lo = 0.0;
    if !(y_lo.is_finite() && y_hi.is_finite()) {
        return Err(Error::Usage("curve data contains non-finite returns".into()));
    }
    // Pad the value axis so lines stay off the frame; guard flat data.
    let pad = if y_hi > y_lo { (y_hi - y_lo) * 0.05 } else { 1.0 };
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let x_hi = x_hi.max(window as f64);

    let px = |x: f64| ML + (x - x_lo) / (x_hi - x_lo) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB);

    let mut svg = String::with_capacity(16 * 1024);
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"ui-monospace, SFMono-Regular, Menlo, monospace\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" fill=\"#111\">{}</text>",
        (ML + W - MR) / 2.0,
        escape(title)
    );

    // Grid and tick labels.
    for t in ticks(x_lo, x_hi) {
        let x = px(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#e4e4e4\"/>",
            MT,
            H - MB
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#444\">{}</text>",
            H - MB + 18.0,
            tick_label(t)
        );
    }
    for t in ticks(y_lo, y_hi) {
        let y = py(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#e4e4e4\"/>",
            ML,
            W - MR
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#444\">{}</text>",
            ML - 8.0,
            y + 4.0,
            tick_label(t)
        );
    }
    // Frame and axis titles.
    let _ = writeln!(
        svg,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>",
        W - ML - MR,
        H - MT - MB
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#111\">episode</text>",
        (ML + W - MR) / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#111\" \
         transform=\"rotate(-90 18 {:.1})\">return (window mean of {window})</text>",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    );

    // Envelope first so every mean line draws on top of every band.
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if c.points.len() > 1 {
            let mut pts = String::new();
            for p in &c.points {
                let _ = write!(pts, "{:.1},{:.1} ", px(p.window_end as f64), py(p.max));
            }
            for p in c.points.iter().rev() {
                let _ = write!(pts, "{:.1},{:.1} ", px(p.window_end as f64), py(p.min));
            }
            let _ = writeln!(
                svg,
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
                pts.trim_end()
            );
        }
    }
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if c.points.len() == 1 {
            let p = c.points[0];
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                px(p.window_end as f64),
                py(p.mean)
            );
            continue;
        }
        let mut pts = String::new();
        for p in &c.points {
            let _ = write!(pts, "{:.1},{:.1} ", px(p.window_end as f64), py(p.mean));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
            pts.trim_end()
        );
    }

    // Legend, top-left inside the frame.
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MT + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"2.5\"/>",
            ML + 10.0,
            ML + 34.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#111\">{}</text>",
            ML + 40.0,
            y + 4.0,
            escape(&c.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round tick positions: steps of 1, 2, or 5 times a power of ten, aiming
/// for five or so intervals.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm < 1.5 {
            1.0
        } else if norm < 3.5 {
            2.0
        } else if norm < 7.5 {
            5.0
        } else {
            10.0
        };
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        // Snap near-zero ticks produced by float drift.
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(t: f64) -> String {
    if t == t.trunc() && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t:.2}")
    }
}
