//! Standalone SVG line, scatter and heatmap plots.
//!
//! Output is a pure function of the input: coordinates are printed with a
//! fixed number of decimals and no timestamps or ids are embedded.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HarnessError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// A labelled sequence of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

/// Titles and axis labels shared by the plot kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub title: String,
    pub x: String,
    pub y: String,
}

impl Labels {
    pub fn new(title: impl Into<String>, x: impl Into<String>, y: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x: x.into(),
            y: y.into(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, extra_y: &[f64]) -> Option<Self> {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return None;
        }
        for &y in extra_y.iter().filter(|y| y.is_finite()) {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let pad = |lo: f64, hi: f64| {
            if hi > lo {
                let p = 0.05 * (hi - lo);
                (lo - p, hi + p)
            } else {
                let p = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
                (lo - p, hi + p)
            }
        };
        Some(Self {
            x: pad(x0, x1),
            y: pad(y0, y1),
        })
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(svg: &mut String, labels: &Labels) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(&labels.title)
    );
}

fn axes(svg: &mut String, f: &Frame, labels: &Labels) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"#
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    axis_titles(svg, labels);
}

fn axis_titles(svg: &mut String, labels: &Labels) {
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        HEIGHT - 12.0,
        escape(&labels.x)
    );
    let cy = (HEIGHT - BOTTOM + TOP) / 2.0;
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{cy:.1}" text-anchor="middle" transform="rotate(-90 16 {cy:.1})">{}</text>"#,
        escape(&labels.y)
    );
}

fn legend(svg: &mut String, entries: &[(String, &str, bool)]) {
    let x = WIDTH - RIGHT + 15.0;
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, (label, colour, dashed)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="5 3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{colour}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0,
            escape(label)
        );
    }
    let _ = writeln!(svg, "</g>");
}

fn check_series(series: &[Series]) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.iter().all(|(x, y)| !x.is_finite() || !y.is_finite())) {
        return Err(HarnessError::Experiment("plot has no finite data points".into()));
    }
    Ok(())
}

/// Line plot with markers; `hlines` are dashed horizontal reference lines.
pub fn line_plot(labels: &Labels, series: &[Series], hlines: &[(String, f64)]) -> Result<String> {
    check_series(series)?;
    let ys: Vec<f64> = hlines.iter().map(|h| h.1).collect();
    let f = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()), &ys).expect("checked non-empty");
    let mut svg = String::new();
    open(&mut svg, labels);
    axes(&mut svg, &f, labels);
    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y) in &pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, f.px(x), f.py(y));
        }
        entries.push((s.label.clone(), colour, false));
    }
    for (i, (label, y)) in hlines.iter().enumerate() {
        if !y.is_finite() {
            continue;
        }
        let colour = PALETTE[(series.len() + i) % PALETTE.len()];
        let py = f.py(*y);
        let _ = writeln!(
            svg,
            r#"<line class="reference" x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="{colour}" stroke-dasharray="5 3"/>"#,
            WIDTH - RIGHT
        );
        entries.push((label.clone(), colour, true));
    }
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Scatter plot, one colour per series.
pub fn scatter_plot(labels: &Labels, series: &[Series]) -> Result<String> {
    check_series(series)?;
    let f = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()), &[]).expect("checked non-empty");
    let mut svg = String::new();
    open(&mut svg, labels);
    axes(&mut svg, &f, labels);
    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = writeln!(
                svg,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="{colour}" fill-opacity="0.7"/>"#,
                f.px(x),
                f.py(y)
            );
        }
        entries.push((s.label.clone(), colour, false));
    }
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Blue-white-red colour for `t ∈ [0, 1]`.
fn diverging(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (59.0 + u * 196.0, 76.0 + u * 179.0, 192.0 + u * 63.0)
    } else {
        let u = (t - 0.5) / 0.5;
        (255.0 - u * 75.0, 255.0 - u * 251.0, 255.0 - u * 217.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Heatmap of `matrix[row][col]` with colours spanning `range`; one
/// `<rect class="cell">` per entry.
pub fn heatmap(labels: &Labels, row_labels: &[String], col_labels: &[String], matrix: &[Vec<f64>], range: (f64, f64)) -> Result<String> {
    if matrix.is_empty() || matrix[0].is_empty() {
        return Err(HarnessError::Experiment("heatmap has no cells".into()));
    }
    let cols = matrix[0].len();
    if matrix.iter().any(|r| r.len() != cols) || row_labels.len() != matrix.len() || col_labels.len() != cols {
        return Err(HarnessError::Experiment("heatmap rows, columns and labels disagree".into()));
    }
    if !(range.1 > range.0) {
        return Err(HarnessError::Experiment("heatmap colour range is empty".into()));
    }
    let rows = matrix.len();
    let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let (cw, ch) = (w / cols as f64, h / rows as f64);
    let mut svg = String::new();
    open(&mut svg, labels);
    let _ = writeln!(svg, r#"<g class="cells">"#);
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let fill = if v.is_finite() {
                diverging((v - range.0) / (range.1 - range.0))
            } else {
                "#cccccc".into()
            };
            let _ = writeln!(
                svg,
                r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}"><title>{} {}: {v:.3}</title></rect>"#,
                LEFT + j as f64 * cw,
                TOP + i as f64 * ch,
                escape(&row_labels[i]),
                escape(&col_labels[j])
            );
        }
    }
    let _ = writeln!(svg, "</g>");
    for (j, l) in col_labels.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + (j as f64 + 0.5) * cw,
            HEIGHT - BOTTOM + 16.0,
            escape(l)
        );
    }
    for (i, l) in row_labels.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            TOP + (i as f64 + 0.5) * ch + 4.0,
            escape(l)
        );
    }
    axis_titles(&mut svg, labels);
    // colour bar
    let bx = WIDTH - RIGHT + 30.0;
    for k in 0..20 {
        let t = 1.0 - k as f64 / 19.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{bx:.1}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            TOP + k as f64 * h / 20.0,
            h / 20.0 + 0.5,
            diverging(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}">{}</text><text x="{:.1}" y="{:.1}">{}</text>"#,
        bx + 22.0,
        TOP + 10.0,
        tick_label(range.1),
        bx + 22.0,
        TOP + h,
        tick_label(range.0)
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        crate::output::ensure_dir(dir)?;
    }
    std::fs::write(path, svg).map_err(|e| HarnessError::io(path, e))
}
