//! Line plots of NMSE-versus-SMNR curves, as CSV and as a minimal SVG.

use std::fmt::Write;

use super::table::ResultTable;

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    /// `(x, y, y standard error)` sorted by `x`.
    pub points: Vec<(f64, f64, f64)>,
}

/// One curve per (table, method). `labels` name the tables.
pub fn curves_from_tables(tables: &[(String, ResultTable)]) -> Vec<Curve> {
    let mut out = Vec::new();
    for (name, table) in tables {
        for method in table.methods() {
            let mut points: Vec<(f64, f64, f64)> = table
                .rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| (r.smnr_db, r.nmse_db_mean, r.nmse_db_stderr))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            out.push(Curve { label: format!("{name}:{method}"), points });
        }
    }
    out
}

pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("series,smnr_db,nmse_db_mean,nmse_db_stderr\n");
    for c in curves {
        for (x, y, e) in &c.points {
            let _ = writeln!(out, "{},{x},{y},{e}", c.label);
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Renders curves with error bars. Output depends only on the input.
pub fn render_svg(curves: &[Curve], title: &str, xlabel: &str, ylabel: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 60.0);
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, e) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - e);
        y1 = y1.max(y + e);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(0.5);
    y0 -= pad;
    y1 += pad;
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    for t in nice_ticks(x0, x1) {
        let _ = writeln!(s, r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#ddd"/>"##, sx(t), top, top + ph);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{t}</text>"#, sx(t), top + ph + 16.0);
    }
    for t in nice_ticks(y0, y1) {
        let _ = writeln!(s, r##"<line x1="{1}" y1="{0:.2}" x2="{2}" y2="{0:.2}" stroke="#ddd"/>"##, sy(t), left, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{t}</text>"#, left - 6.0, sy(t) + 4.0);
    }
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 18.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(ylabel)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = c.points.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y, e) in &c.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
            if e > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/>"#,
                    sx(x),
                    sy(y - e),
                    sy(y + e)
                );
            }
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    s
}
