//! Minimal log-log SVG of mean loss against sample size.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::harness::{CellResult, Metric};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// One polyline per (model, metric); one dashed reference path per model
/// following the principal rate term, anchored at its first data point.
pub fn rate_plot_svg(cells: &[CellResult]) -> String {
    let mut series: BTreeMap<(usize, Metric), Series> = BTreeMap::new();
    for c in cells {
        for m in c.metrics.iter().filter(|m| m.mean_loss > 0.0) {
            series
                .entry((c.model_index, m.metric))
                .or_insert_with(|| Series {
                    label: format!("model {} {}", c.model_index, m.metric.name()),
                    points: Vec::new(),
                })
                .points
                .push(((c.n as f64).ln(), m.mean_loss.ln()));
        }
    }
    let mut reference_lines: BTreeMap<usize, (f64, Vec<(f64, f64)>)> = BTreeMap::new();
    for c in cells {
        let Some(m) = c.metrics.iter().find(|m| m.mean_loss > 0.0 && m.rate_principal > 0.0) else {
            continue;
        };
        let (offset, line) = reference_lines
            .entry(c.model_index)
            .or_insert_with(|| (m.mean_loss.ln() - m.rate_principal.ln(), Vec::new()));
        line.push(((c.n as f64).ln(), m.rate_principal.ln() + *offset));
    }

    let all = series
        .values()
        .flat_map(|s| s.points.iter())
        .chain(reference_lines.values().flat_map(|(_, l)| l.iter()));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let coords = |pts: &[(f64, f64)]| {
        pts.iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{m}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}"/></g>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">log n  [{x0:.3}, {x1:.3}]</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="12" transform="rotate(-90 16 {})" text-anchor="middle">log mean loss  [{y0:.3}, {y1:.3}]</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, s) in series.values().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords(&s.points)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 110.0,
            MARGIN + 14.0 * i as f64,
            s.label
        );
    }
    for (model, (_, line)) in &reference_lines {
        let d = line
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            r#"<path class="reference" data-model="{model}" fill="none" stroke="gray" stroke-dasharray="6 4" d="{d}"/>"#
        );
    }
    svg.push_str("</svg>\n");
    svg
}
