//! Deterministic SVG scatter/line plots from two-column CSV tables.
//!
//! No plotting dependency: the output is a fixed 800×600 document with
//! hand-placed axes, built purely from the data, so identical inputs give
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 60.0;

#[derive(Clone, Copy, Debug, Default)]
pub struct PlotSpec {
    /// Plot log10 of both columns and overlay the least-squares line with
    /// its slope label.
    pub loglog: bool,
}

/// Parse the first two numeric columns of a CSV file (one header line).
pub fn read_xy(csv: &str) -> Result<(String, String, Vec<(f64, f64)>)> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("empty CSV")?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 {
        bail!("need at least two CSV columns, found {}", cols.len());
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            bail!("row {} has {} fields, need 2", i + 2, fields.len());
        }
        let x: f64 = fields[0]
            .trim()
            .parse()
            .with_context(|| format!("row {}: non-numeric x {:?}", i + 2, fields[0]))?;
        let y: f64 = fields[1]
            .trim()
            .parse()
            .with_context(|| format!("row {}: non-numeric y {:?}", i + 2, fields[1]))?;
        rows.push((x, y));
    }
    if rows.is_empty() {
        bail!("CSV has a header but no data rows");
    }
    Ok((cols[0].to_string(), cols[1].to_string(), rows))
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 && v.abs() < 10000.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// Render a two-column table to an 800×600 SVG.  For log-log specs both
/// axes carry log10 values and the fitted line is drawn with a slope label
/// to three decimals.
pub fn render_svg(xlabel: &str, ylabel: &str, rows: &[(f64, f64)], spec: PlotSpec) -> Result<String> {
    let pts: Vec<(f64, f64)> = if spec.loglog {
        if rows.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
            bail!("log-log plot needs strictly positive data");
        }
        rows.iter().map(|&(x, y)| (x.log10(), y.log10())).collect()
    } else {
        rows.to_vec()
    };
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(x, _)| (a.min(x), b.max(x)));
    let (mut y0, mut y1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, y)| (a.min(y), b.max(y)));
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad_x = 0.05 * (x1 - x0);
    let pad_y = 0.05 * (y1 - y0);
    x0 -= pad_x;
    x1 += pad_x;
    y0 -= pad_y;
    y1 += pad_y;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )?;
    writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>")?;
    // axes
    writeln!(
        svg,
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    )?;
    writeln!(
        svg,
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>",
        HEIGHT - MARGIN_B
    )?;
    // ticks: five per axis
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let px = sx(fx);
        let py = sy(fy);
        writeln!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"{}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"black\"/>",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 6.0
        )?;
        writeln!(
            svg,
            "<text x=\"{px:.2}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            HEIGHT - MARGIN_B + 20.0,
            fmt_tick(fx)
        )?;
        writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{MARGIN_L}\" y2=\"{py:.2}\" stroke=\"black\"/>",
            MARGIN_L - 6.0
        )?;
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 10.0,
            py + 4.0,
            fmt_tick(fy)
        )?;
    }
    let axis_suffix = if spec.loglog { " (log10)" } else { "" };
    writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{}\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">{}{}</text>",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 15.0,
        xml_escape(xlabel),
        axis_suffix
    )?;
    writeln!(
        svg,
        "<text x=\"20\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">{}{}</text>",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        xml_escape(ylabel),
        axis_suffix
    )?;

    // data polyline + markers
    let path: Vec<String> =
        pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>",
        path.join(" ")
    )?;
    for &(x, y) in &pts {
        writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>",
            sx(x),
            sy(y)
        )?;
    }

    if spec.loglog && pts.len() >= 2 {
        let n = pts.len() as f64;
        let sxs: f64 = pts.iter().map(|p| p.0).sum();
        let sys: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sxs * sys) / (n * sxx - sxs * sxs);
        let intercept = (sys - slope * sxs) / n;
        let ya = intercept + slope * x0;
        let yb = intercept + slope * x1;
        writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"crimson\" stroke-dasharray=\"6 3\" stroke-width=\"1.5\"/>",
            sx(x0),
            sy(ya),
            sx(x1),
            sy(yb)
        )?;
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"14\" fill=\"crimson\">slope = {slope:.3}</text>",
            MARGIN_L + 15.0,
            MARGIN_T + 20.0
        )?;
    }
    writeln!(svg, "</svg>")?;
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Read a CSV file and write the SVG next to it (or at `out`).
pub fn emit_plot(csv_path: &Path, spec: PlotSpec, out: Option<&Path>) -> Result<std::path::PathBuf> {
    let text = std::fs::read_to_string(csv_path)
        .with_context(|| format!("reading {}", csv_path.display()))?;
    let (xl, yl, rows) = read_xy(&text)?;
    let svg = render_svg(&xl, &yl, &rows, spec)?;
    let target = out
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| csv_path.with_extension("svg"));
    std::fs::write(&target, svg).with_context(|| format!("writing {}", target.display()))?;
    Ok(target)
}
