//! Minimal SVG line and bar charts for the CSV files the pipeline writes.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Header plus string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("CSV has no column '{name}'")))
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[c].trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("'{}' in column {name} is not a number", r[c])))
            })
            .collect()
    }
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(Table { header, rows })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn frame(svg: &mut String, title: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64), ylabel: &str) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, W - 20.0, 40.0, H - MARGIN);
    let _ = write!(
        svg,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = b - f * (b - t);
        let x = l + f * (r - l);
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            l - 4.0,
            y + 4.0,
            y0 + f * (y1 - y0)
        );
        let _ = write!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle">{:.3}</text>"#,
            b + 16.0,
            x0 + f * (x1 - x0)
        );
    }
    let _ = write!(
        svg,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn project(x: f64, y: f64, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> (f64, f64) {
    let (l, r, t, b) = (MARGIN, W - 20.0, 40.0, H - MARGIN);
    (l + (x - x0) / (x1 - x0) * (r - l), b - (y - y0) / (y1 - y0) * (b - t))
}

fn polyline(svg: &mut String, xs: &[f64], ys: &[f64], xr: (f64, f64), yr: (f64, f64), color: &str) {
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let (px, py) = project(x, y, xr, yr);
            format!("{px:.1},{py:.1}")
        })
        .collect();
    let _ = write!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
        pts.join(" ")
    );
}

/// One line per `y` column against column `x`; `log_y` plots log10 values.
pub fn line_chart(table: &Table, x: &str, ys: &[&str], title: &str, log_y: bool) -> Result<String> {
    let xs = table.numbers(x)?;
    let mut series = Vec::new();
    for y in ys {
        let mut v = table.numbers(y)?;
        if log_y {
            v = v.iter().map(|a| a.abs().max(1e-300).log10()).collect();
        }
        series.push((y.to_string(), v));
    }
    let xr = range(xs.iter().copied());
    let yr = range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut svg = String::new();
    let label = if log_y {
        format!("log10 {}", ys.join(", "))
    } else {
        ys.join(", ")
    };
    frame(&mut svg, title, xr, yr, &label);
    for (i, (_, v)) in series.iter().enumerate() {
        polyline(&mut svg, &xs, v, xr, yr, COLORS[i % COLORS.len()]);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// One line per distinct value of the `group` column.
pub fn grouped_line_chart(table: &Table, group: &str, x: &str, y: &str, title: &str) -> Result<String> {
    let g = table.column(group)?;
    let (xs, ys) = (table.numbers(x)?, table.numbers(y)?);
    let mut names: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !names.contains(&r[g].as_str()) {
            names.push(&r[g]);
        }
    }
    let xr = range(xs.iter().copied());
    let yr = range(ys.iter().copied().chain(std::iter::once(0.0)));
    let mut svg = String::new();
    frame(&mut svg, title, xr, yr, y);
    for (i, name) in names.iter().enumerate() {
        let idx: Vec<usize> = (0..table.rows.len()).filter(|&k| table.rows[k][g] == *name).collect();
        let gx: Vec<f64> = idx.iter().map(|&k| xs[k]).collect();
        let gy: Vec<f64> = idx.iter().map(|&k| ys[k]).collect();
        let color = COLORS[i % COLORS.len()];
        polyline(&mut svg, &gx, &gy, xr, yr, color);
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - 140.0,
            50.0 + 16.0 * i as f64,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Vertical bars of column `value` labelled by column `label`.
pub fn bar_chart(table: &Table, label: &str, value: &str, title: &str) -> Result<String> {
    let l = table.column(label)?;
    let vals = table.numbers(value)?;
    let top = vals.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    let mut svg = String::new();
    frame(&mut svg, title, (0.0, vals.len() as f64), (0.0, top), value);
    let slot = (W - 20.0 - MARGIN) / vals.len().max(1) as f64;
    for (i, v) in vals.iter().enumerate() {
        let (x, y) = project(i as f64 + 0.15, *v, (0.0, vals.len() as f64), (0.0, top));
        let (_, base) = project(0.0, 0.0, (0.0, 1.0), (0.0, top));
        let _ = write!(
            svg,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
            0.7 * slot,
            base - y,
            COLORS[i % COLORS.len()]
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + 0.35 * slot,
            y - 4.0,
            escape(&table.rows[i][l])
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
