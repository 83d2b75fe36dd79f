//! Self-contained SVG sweep charts: one row of panels per corruption, one
//! panel per metric, one line per method, severity on the x-axis.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::SweepSeries;
use crate::metrics::EvalSummary;

const PANEL_W: f64 = 280.0;
const PANEL_H: f64 = 220.0;
const PAD_LEFT: f64 = 44.0;
const PAD_RIGHT: f64 = 14.0;
const PAD_TOP: f64 = 28.0;
const PAD_BOTTOM: f64 = 36.0;
const LEGEND_H: f64 = 34.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

type MetricFn = fn(&EvalSummary) -> Option<f64>;

const METRICS: [(&str, MetricFn); 4] = [
    ("Accuracy", |s| Some(s.accuracy)),
    ("PT", |s| s.pt.ok()),
    ("IR", |s| s.ir.ok()),
    ("Valid evidence rate", |s| Some(s.valid_evidence_rate)),
];

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

pub(super) fn render(sweeps: &[SweepSeries]) -> String {
    let methods: Vec<&str> = sweeps
        .iter()
        .map(|s| s.method.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let corruptions: Vec<&str> = sweeps
        .iter()
        .map(|s| s.corruption.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let color = |method: &str| {
        let i = methods.iter().position(|m| *m == method).unwrap_or(0);
        PALETTE[i % PALETTE.len()]
    };

    let width = PANEL_W * METRICS.len() as f64;
    let height = LEGEND_H + PANEL_H * corruptions.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##
    );

    let mut x = 10.0;
    for m in &methods {
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="17" x2="{}" y2="17" stroke="{}" stroke-width="2"/><text x="{}" y="21">{}</text>"#,
            x + 18.0,
            color(m),
            x + 22.0,
            escape(m)
        );
        x += 30.0 + 7.0 * m.chars().count() as f64;
    }

    for (row, corruption) in corruptions.iter().enumerate() {
        let series: Vec<&SweepSeries> = sweeps
            .iter()
            .filter(|s| s.corruption == *corruption)
            .collect();
        let severities: BTreeSet<u32> = series
            .iter()
            .flat_map(|s| s.points.iter().map(|(sev, _)| *sev))
            .collect();
        let lo = severities.first().copied().unwrap_or(0) as f64;
        let hi = severities.last().copied().unwrap_or(0) as f64;
        let label = if corruption.is_empty() {
            "clean"
        } else {
            corruption
        };

        for (col, (metric_name, metric)) in METRICS.iter().enumerate() {
            let ox = col as f64 * PANEL_W;
            let oy = LEGEND_H + row as f64 * PANEL_H;
            let (left, right) = (ox + PAD_LEFT, ox + PANEL_W - PAD_RIGHT);
            let (top, bottom) = (oy + PAD_TOP, oy + PANEL_H - PAD_BOTTOM);
            let sx = |sev: f64| {
                if hi > lo {
                    left + (sev - lo) / (hi - lo) * (right - left)
                } else {
                    (left + right) / 2.0
                }
            };
            let sy = |v: f64| bottom - v.clamp(0.0, 1.0) * (bottom - top);

            let _ = writeln!(svg, r#"<g class="panel">"#);
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-weight="bold">{} ({})</text>"#,
                (left + right) / 2.0,
                oy + 16.0,
                escape(metric_name),
                escape(label)
            );
            for tick in [0.0, 0.5, 1.0] {
                let y = sy(tick);
                let _ = writeln!(
                    svg,
                    r##"<line x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick}</text>"##,
                    left - 4.0,
                    y + 4.0
                );
            }
            let _ = writeln!(
                svg,
                r##"<path d="M{left:.2} {top:.2}V{bottom:.2}H{right:.2}" fill="none" stroke="#333333"/>"##
            );
            for sev in &severities {
                let xx = sx(*sev as f64);
                let _ = writeln!(
                    svg,
                    r##"<line x1="{xx:.2}" y1="{bottom:.2}" x2="{xx:.2}" y2="{:.2}" stroke="#333333"/><text x="{xx:.2}" y="{:.2}" text-anchor="middle">{sev}</text>"##,
                    bottom + 4.0,
                    bottom + 16.0
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">severity</text>"#,
                (left + right) / 2.0,
                bottom + 30.0
            );

            for s in &series {
                let stroke = color(&s.method);
                // Undefined values split the line into segments.
                let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
                for (sev, summary) in &s.points {
                    match metric(summary) {
                        Some(v) => segments
                            .last_mut()
                            .expect("non-empty")
                            .push((sx(*sev as f64), sy(v))),
                        None => segments.push(Vec::new()),
                    }
                }
                for seg in segments.iter().filter(|seg| !seg.is_empty()) {
                    let pts: Vec<String> =
                        seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        svg,
                        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
                        pts.join(" ")
                    );
                    for (x, y) in seg {
                        let _ = writeln!(
                            svg,
                            r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{stroke}"/>"#
                        );
                    }
                }
            }
            let _ = writeln!(svg, "</g>");
        }
    }
    svg.push_str("</svg>\n");
    svg
}
