//! Self-contained SVG line and heatmap plots of result tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::table::Table;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// How a table is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum PlotKind {
    /// `y` against `x`, one polyline per distinct value of `series`.
    Line {
        x: String,
        y: String,
        series: Option<String>,
        log_y: bool,
    },
    /// One annotated cell per `(row, col)` pair, colored by `value`.
    Heatmap { row: String, col: String, value: String },
}

impl PlotKind {
    pub fn line(x: &str, y: &str, series: Option<&str>, log_y: bool) -> Self {
        PlotKind::Line {
            x: x.into(),
            y: y.into(),
            series: series.map(Into::into),
            log_y,
        }
    }

    pub fn heatmap(row: &str, col: &str, value: &str) -> Self {
        PlotKind::Heatmap {
            row: row.into(),
            col: col.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("table {table} has no column {column}")]
    MissingColumn { table: String, column: String },
    #[error("writing plot: {0}")]
    Io(#[from] std::io::Error),
}

/// Result of [`emit_plot`].
#[derive(Debug, Clone, PartialEq)]
pub enum PlotOutcome {
    Written(PathBuf),
    /// Nothing drawable; the message explains why and no file was written.
    Skipped(String),
}

/// Renders `table` and writes it to `path`. An empty table (or one with no
/// finite points) yields [`PlotOutcome::Skipped`] instead of a file.
pub fn emit_plot(table: &Table, kind: &PlotKind, title: &str, path: &Path) -> Result<PlotOutcome, PlotError> {
    match render_svg(table, kind, title)? {
        Some(svg) => {
            std::fs::write(path, svg)?;
            Ok(PlotOutcome::Written(path.to_path_buf()))
        }
        None => Ok(PlotOutcome::Skipped(format!(
            "table {} has nothing to plot; {} not written",
            table.name,
            path.display()
        ))),
    }
}

/// SVG document for `table`, or `None` when there is nothing to draw.
pub fn render_svg(table: &Table, kind: &PlotKind, title: &str) -> Result<Option<String>, PlotError> {
    let column = |name: &str| {
        table.column_index(name).ok_or_else(|| PlotError::MissingColumn {
            table: table.name.clone(),
            column: name.to_string(),
        })
    };
    match kind {
        PlotKind::Line { x, y, series, log_y } => {
            let (xi, yi) = (column(x)?, column(y)?);
            let si = series.as_deref().map(column).transpose()?;
            Ok(line_svg(table, xi, yi, si, *log_y, title))
        }
        PlotKind::Heatmap { row, col, value } => {
            let (ri, ci, vi) = (column(row)?, column(col)?, column(value)?);
            Ok(heatmap_svg(table, ri, ci, vi, title))
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text class="title" x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

/// Distinct values in order of first appearance.
fn distinct(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Maps `[lo, hi]` onto `[a, b]`; a degenerate range maps to the midpoint.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        0.5 * (a + b)
    }
}

fn line_svg(table: &Table, xi: usize, yi: usize, si: Option<usize>, log_y: bool, title: &str) -> Option<String> {
    let transform = |v: f64| if log_y { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
    let names = distinct(table.rows.iter().map(|r| si.map(|i| r[i].render()).unwrap_or_default()));
    let mut series: Vec<(String, Vec<(f64, f64)>)> = names
        .into_iter()
        .map(|name| {
            let mut pts: Vec<(f64, f64)> = table
                .rows
                .iter()
                .filter(|r| si.map(|i| r[i].render()).unwrap_or_default() == name)
                .filter_map(|r| {
                    let x = r[xi].as_f64()?;
                    let y = transform(r[yi].as_f64()?);
                    (x.is_finite() && y.is_finite()).then_some((x, y))
                })
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (name, pts)
        })
        .collect();
    series.retain(|(_, p)| !p.is_empty());
    if series.is_empty() {
        return None;
    }
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    let (px0, px1, py0, py1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let mut s = header(title);
    // axes
    let _ = writeln!(
        s,
        r##"<path class="axes" d="M {px0:.2},{py1:.2} L {px0:.2},{py0:.2} L {px1:.2},{py0:.2}" fill="none" stroke="#000000"/>"##
    );
    let (xl, yl) = (&table.columns[xi], &table.columns[yi]);
    let ylabel = if log_y { format!("log10 {yl}") } else { yl.clone() };
    let _ = writeln!(
        s,
        r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        0.5 * (px0 + px1),
        HEIGHT - 15.0,
        escape(xl)
    );
    let _ = writeln!(
        s,
        r#"<text class="ylabel" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        0.5 * (py0 + py1),
        0.5 * (py0 + py1),
        escape(&ylabel)
    );
    for (v, x) in [(x_lo, px0), (x_hi, px1)] {
        let _ = writeln!(s, r#"<text class="tick" x="{x:.2}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#, py0 + 18.0);
    }
    for (v, y) in [(y_lo, py0), (y_hi, py1)] {
        let _ = writeln!(s, r#"<text class="tick" x="{:.2}" y="{y:.2}" text-anchor="end">{v:.3}</text>"#, px0 - 6.0);
    }
    let series_label = si.map(|i| table.columns[i].clone());
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(x, y)| (scale(x, x_lo, x_hi, px0, px1), scale(y, y_lo, y_hi, py0, py1)))
            .collect();
        let d: Vec<String> = coords
            .iter()
            .enumerate()
            .map(|(i, (x, y))| format!("{} {x:.2},{y:.2}", if i == 0 { "M" } else { "L" }))
            .collect();
        let _ = writeln!(
            s,
            r#"<path class="series" data-series="{}" d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(name),
            d.join(" ")
        );
        for (x, y) in &coords {
            let _ = writeln!(s, r#"<circle class="marker" cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        if let Some(label) = &series_label {
            let ly = TOP + 10.0 + 18.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text class="legend" x="{:.2}" y="{ly:.2}" fill="{color}">{} = {}</text>"#,
                WIDTH - RIGHT + 15.0,
                escape(label),
                escape(name)
            );
        }
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn heatmap_svg(table: &Table, ri: usize, ci: usize, vi: usize, title: &str) -> Option<String> {
    if table.is_empty() {
        return None;
    }
    let rows = distinct(table.rows.iter().map(|r| r[ri].render()));
    let cols = distinct(table.rows.iter().map(|r| r[ci].render()));
    let values: Vec<f64> = table.rows.iter().filter_map(|r| r[vi].as_f64()).filter(|v| v.is_finite()).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (px0, px1, py0, py1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let cw = (px1 - px0) / cols.len() as f64;
    let ch = (py1 - py0) / rows.len() as f64;
    let mut s = header(title);
    for row in &table.rows {
        let r = rows.iter().position(|v| *v == row[ri].render()).expect("row present");
        let c = cols.iter().position(|v| *v == row[ci].render()).expect("col present");
        let v = row[vi].as_f64().unwrap_or(f64::NAN);
        let fill = if v.is_finite() {
            // white → blue ramp
            let t = scale(v, lo, hi, 0.0, 1.0);
            let channel = |full: f64| (255.0 + t * (full - 255.0)).round() as u8;
            format!("#{:02x}{:02x}{:02x}", channel(31.0), channel(119.0), channel(180.0))
        } else {
            "#cccccc".into()
        };
        let (x, y) = (px0 + c as f64 * cw, py0 + r as f64 * ch);
        let _ = writeln!(
            s,
            r##"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}" stroke="#ffffff"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text class="value" x="{:.2}" y="{:.2}" text-anchor="middle" dominant-baseline="middle">{:.3}</text>"#,
            x + 0.5 * cw,
            y + 0.5 * ch,
            v
        );
    }
    for (c, name) in cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="collabel" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px0 + (c as f64 + 0.5) * cw,
            py1 + 18.0,
            escape(name)
        );
    }
    for (r, name) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="rowlabel" x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            px0 - 6.0,
            py0 + (r as f64 + 0.5) * ch,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        0.5 * (px0 + px1),
        HEIGHT - 15.0,
        escape(&table.columns[ci])
    );
    let _ = writeln!(
        s,
        r#"<text class="ylabel" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        0.5 * (py0 + py1),
        0.5 * (py0 + py1),
        escape(&table.columns[ri])
    );
    let _ = writeln!(
        s,
        r#"<text class="legend" x="{:.2}" y="{:.2}">{}: {lo:.3} … {hi:.3}</text>"#,
        WIDTH - RIGHT + 15.0,
        TOP + 10.0,
        escape(&table.columns[vi])
    );
    s.push_str("</svg>\n");
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Cell;

    fn attr_values(svg: &str, element: &str, attr: &str) -> Vec<f64> {
        svg.lines()
            .filter(|l| l.contains(element))
            .filter_map(|l| {
                let key = format!("{attr}=\"");
                let start = l.find(&key)? + key.len();
                l[start..].split('"').next()?.parse().ok()
            })
            .collect()
    }

    #[test]
    fn single_point_has_one_marker() {
        let mut t = Table::new("t", &["x", "y"]);
        t.push(vec![Cell::from(1.0), Cell::from(2.0)]);
        let svg = render_svg(&t, &PlotKind::line("x", "y", None, false), "one").unwrap().unwrap();
        assert_eq!(svg.matches(r#"class="marker""#).count(), 1);
        assert!(svg.starts_with("<svg xmlns"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_grid_has_nine_annotated_cells() {
        let mut t = Table::new("t", &["M", "N", "v"]);
        for m in [1usize, 2, 4] {
            for n in [8usize, 16, 32] {
                t.push(vec![Cell::from(m), Cell::from(n), Cell::from((m * n) as f64)]);
            }
        }
        let svg = render_svg(&t, &PlotKind::heatmap("M", "N", "v"), "grid").unwrap().unwrap();
        assert_eq!(svg.matches(r#"class="cell""#).count(), 9);
        assert_eq!(svg.matches(r#"class="value""#).count(), 9);
        assert!(svg.contains(">128.000</text>"));
    }

    #[test]
    fn monotone_series_has_ordered_coordinates() {
        let mut t = Table::new("t", &["x", "y"]);
        for i in [3usize, 0, 2, 1, 4] {
            t.push(vec![Cell::from(i), Cell::from((i * i) as f64)]);
        }
        let svg = render_svg(&t, &PlotKind::line("x", "y", None, false), "mono").unwrap().unwrap();
        let cx = attr_values(&svg, r#"class="marker""#, "cx");
        let cy = attr_values(&svg, r#"class="marker""#, "cy");
        assert_eq!(cx.len(), 5);
        assert!(cx.windows(2).all(|w| w[0] < w[1]));
        // SVG y grows downward, so an increasing series has decreasing y
        assert!(cy.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn empty_table_is_skipped_without_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.svg");
        let t = Table::new("t", &["x", "y"]);
        let out = emit_plot(&t, &PlotKind::line("x", "y", None, false), "e", &path).unwrap();
        assert!(matches!(out, PlotOutcome::Skipped(_)));
        assert!(!path.exists());
        let out = emit_plot(&t, &PlotKind::heatmap("x", "y", "y"), "e", &path).unwrap();
        assert!(matches!(out, PlotOutcome::Skipped(_)));
        assert!(!path.exists());
    }

    #[test]
    fn missing_column_is_an_error() {
        let t = Table::new("t", &["x"]);
        assert!(matches!(
            render_svg(&t, &PlotKind::line("x", "nope", None, false), ""),
            Err(PlotError::MissingColumn { .. })
        ));
    }

    #[test]
    fn series_and_log_axis() {
        let mut t = Table::new("t", &["M", "it", "merit"]);
        for m in [1usize, 4] {
            for it in 0..3usize {
                t.push(vec![Cell::from(m), Cell::from(it), Cell::from(10f64.powi(-(it as i32)) / m as f64)]);
            }
        }
        // a non-positive value is dropped on a log axis
        t.push(vec![Cell::from(4usize), Cell::from(3usize), Cell::from(0.0)]);
        let svg = render_svg(&t, &PlotKind::line("it", "merit", Some("M"), true), "log").unwrap().unwrap();
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert_eq!(svg.matches(r#"class="marker""#).count(), 6);
        assert!(svg.contains("log10 merit"));
    }
}
