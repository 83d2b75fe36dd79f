//! Report rendering: nested JSON, flat CSV, and SVG sweep charts.
//!
//! Every real number is rendered with 9 significant digits (round half to
//! even on the exact binary value), and JSON numbers are the parse of the
//! same decimal string, so the two formats carry identical values.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{svg, GroupKey, SweepSeries};
use crate::attribution::{AttributionMethod, LayerMode};
use crate::metrics::{EvalSummary, UndefinedMetric};

pub const SCHEMA: &str = "rationality-eval/1";
pub const TOOLKIT_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_COLUMNS: [&str; 12] = [
    "method",
    "corruption",
    "severity",
    "n",
    "rr",
    "rw",
    "wr",
    "ww",
    "accuracy",
    "pt",
    "ir",
    "valid_evidence_rate",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("nothing to report: no groups")]
    EmptyReport,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Svg => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!("unknown report format {other:?} (json, csv, svg)")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Run configuration recorded in JSON reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub threshold: f64,
    pub attribution: AttributionMethod,
    pub layer_mode: LayerMode,
    pub iou_tau: Option<f64>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            attribution: AttributionMethod::default(),
            layer_mode: LayerMode::default(),
            iou_tau: None,
        }
    }
}

/// Renders `x` with 9 significant digits in plain decimal notation,
/// trailing zeros removed.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let point = exp + 1;
    let mut out = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{int}.{frac}")
    };
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    if negative {
        out.insert(0, '-');
    }
    out
}

fn number(x: f64) -> Value {
    let rounded: f64 = format_sig9(x).parse().expect("formatted number parses");
    serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
}

fn insert_metric(obj: &mut Map<String, Value>, name: &str, value: &Result<f64, UndefinedMetric>) {
    match value {
        Ok(v) => {
            obj.insert(name.to_string(), number(*v));
        }
        Err(reason) => {
            obj.insert(name.to_string(), Value::Null);
            obj.insert(
                format!("{name}_undefined_reason"),
                Value::String(reason.to_string()),
            );
        }
    }
}

fn summary_json(summary: &EvalSummary) -> Map<String, Value> {
    let mut obj = Map::new();
    obj.insert("n".into(), json!(summary.n));
    obj.insert(
        "tally".into(),
        json!({
            "rr": summary.tally.rr,
            "rw": summary.tally.rw,
            "wr": summary.tally.wr,
            "ww": summary.tally.ww,
        }),
    );
    obj.insert("accuracy".into(), number(summary.accuracy));
    insert_metric(&mut obj, "pt", &summary.pt);
    insert_metric(&mut obj, "ir", &summary.ir);
    obj.insert(
        "valid_evidence_rate".into(),
        number(summary.valid_evidence_rate),
    );
    obj.insert(
        "degenerate_heatmaps".into(),
        json!(summary.degenerate_heatmaps),
    );
    obj
}

fn sweeps_json(sweeps: &[SweepSeries]) -> Value {
    Value::Array(
        sweeps
            .iter()
            .map(|s| {
                let points: Vec<Value> = s
                    .points
                    .iter()
                    .map(|(severity, summary)| {
                        let mut obj = summary_json(summary);
                        obj.insert("severity".into(), json!(severity));
                        Value::Object(obj)
                    })
                    .collect();
                json!({
                    "method": s.method,
                    "corruption": s.corruption,
                    "points": points,
                })
            })
            .collect(),
    )
}

fn header(provenance: &Provenance) -> Map<String, Value> {
    let mut obj = Map::new();
    obj.insert("schema".into(), json!(SCHEMA));
    obj.insert(
        "toolkit".into(),
        json!({ "name": TOOLKIT_NAME, "version": TOOLKIT_VERSION }),
    );
    obj.insert(
        "config".into(),
        json!({
            "threshold": number(provenance.threshold),
            "attribution": provenance.attribution,
            "layer_mode": provenance.layer_mode,
            "iou_tau": provenance.iou_tau.map(number),
        }),
    );
    obj
}

fn to_pretty_bytes(value: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("json values serialize");
    bytes.push(b'\n');
    bytes
}

fn json_report(
    summaries: &BTreeMap<GroupKey, EvalSummary>,
    sweeps: &[SweepSeries],
    provenance: &Provenance,
) -> Vec<u8> {
    let mut root = header(provenance);
    let groups: Vec<Value> = summaries
        .iter()
        .map(|(key, summary)| {
            let mut obj = summary_json(summary);
            obj.insert("method".into(), json!(key.method));
            obj.insert("corruption".into(), json!(key.corruption));
            obj.insert("severity".into(), json!(key.severity));
            Value::Object(obj)
        })
        .collect();
    root.insert(
        "total_samples".into(),
        json!(summaries.values().map(|s| s.n).sum::<u64>()),
    );
    root.insert("groups".into(), Value::Array(groups));
    root.insert("sweeps".into(), sweeps_json(sweeps));
    to_pretty_bytes(&Value::Object(root))
}

fn csv_report(summaries: &BTreeMap<GroupKey, EvalSummary>) -> Result<Vec<u8>, ReportError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(CSV_COLUMNS)?;
    let metric =
        |m: &Result<f64, UndefinedMetric>| m.as_ref().map(|v| format_sig9(*v)).unwrap_or_default();
    for (key, s) in summaries {
        writer.write_record([
            key.method.clone(),
            key.corruption.clone(),
            key.severity.to_string(),
            s.n.to_string(),
            s.tally.rr.to_string(),
            s.tally.rw.to_string(),
            s.tally.wr.to_string(),
            s.tally.ww.to_string(),
            format_sig9(s.accuracy),
            metric(&s.pt),
            metric(&s.ir),
            format_sig9(s.valid_evidence_rate),
        ])?;
    }
    writer
        .into_inner()
        .map_err(|e| ReportError::Csv(e.into_error().into()))
}

/// Renders the grouped report in one format.
pub fn emit_report(
    summaries: &BTreeMap<GroupKey, EvalSummary>,
    sweeps: &[SweepSeries],
    format: ReportFormat,
    provenance: &Provenance,
) -> Result<Vec<u8>, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    match format {
        ReportFormat::Json => Ok(json_report(summaries, sweeps, provenance)),
        ReportFormat::Csv => csv_report(summaries),
        ReportFormat::Svg => Ok(svg::render(sweeps).into_bytes()),
    }
}

/// JSON document holding only the sweep series.
pub fn emit_sweep_report(
    sweeps: &[SweepSeries],
    provenance: &Provenance,
) -> Result<Vec<u8>, ReportError> {
    if sweeps.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    let mut root = header(provenance);
    root.insert("sweeps".into(), sweeps_json(sweeps));
    Ok(to_pretty_bytes(&Value::Object(root)))
}
