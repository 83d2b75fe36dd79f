//! Grouped evaluation: per-method / per-corruption / per-severity summaries
//! and severity sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{self, classify_quadrant, EvalSummary, Quadrant, QuadrantTally};

mod report;
mod svg;

pub use report::{
    emit_report, emit_sweep_report, format_sig9, Provenance, ReportError, ReportFormat,
};

pub const TAG_METHOD: &str = "method";
pub const TAG_CORRUPTION: &str = "corruption";
pub const TAG_SEVERITY: &str = "severity";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("sample {sample_id:?} has no `method` tag")]
    MissingTag { sample_id: String },
    #[error("sample {sample_id:?}: severity tag {value:?} is not a non-negative integer")]
    InvalidSeverity { sample_id: String, value: String },
    #[error("sample {sample_id:?}: severity must be 0 exactly when corruption is empty (corruption {corruption:?}, severity {severity})")]
    InconsistentGroup {
        sample_id: String,
        corruption: String,
        severity: u32,
    },
}

/// Evaluation group. Clean data has an empty corruption and severity 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub method: String,
    pub corruption: String,
    pub severity: u32,
}

impl GroupKey {
    pub fn clean(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            corruption: String::new(),
            severity: 0,
        }
    }

    pub fn corrupted(
        method: impl Into<String>,
        corruption: impl Into<String>,
        severity: u32,
    ) -> Self {
        Self {
            method: method.into(),
            corruption: corruption.into(),
            severity,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.corruption.is_empty()
    }

    /// Resolves a key from sample tags.
    pub fn from_tags(
        sample_id: &str,
        tags: &BTreeMap<String, String>,
    ) -> Result<Self, AnalysisError> {
        let method = tags
            .get(TAG_METHOD)
            .filter(|m| !m.is_empty())
            .ok_or_else(|| AnalysisError::MissingTag {
                sample_id: sample_id.to_string(),
            })?
            .clone();
        let corruption = tags.get(TAG_CORRUPTION).cloned().unwrap_or_default();
        let severity = match tags.get(TAG_SEVERITY) {
            None => 0,
            Some(s) => s
                .trim()
                .parse::<u32>()
                .map_err(|_| AnalysisError::InvalidSeverity {
                    sample_id: sample_id.to_string(),
                    value: s.clone(),
                })?,
        };
        if corruption.is_empty() != (severity == 0) {
            return Err(AnalysisError::InconsistentGroup {
                sample_id: sample_id.to_string(),
                corruption,
                severity,
            });
        }
        Ok(Self {
            method,
            corruption,
            severity,
        })
    }

    pub fn to_tags(&self) -> BTreeMap<String, String> {
        let mut tags = BTreeMap::new();
        tags.insert(TAG_METHOD.to_string(), self.method.clone());
        if !self.is_clean() {
            tags.insert(TAG_CORRUPTION.to_string(), self.corruption.clone());
            tags.insert(TAG_SEVERITY.to_string(), self.severity.to_string());
        }
        tags
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            write!(f, "{}/clean", self.method)
        } else {
            write!(f, "{}/{}/{}", self.method, self.corruption, self.severity)
        }
    }
}

/// One evaluated sample, as written to the per-sample scores file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub true_class: u32,
    pub pred_class: u32,
    pub correct: bool,
    pub rma: f64,
    pub quadrant: Quadrant,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

pub const FLAG_DEGENERATE_HEATMAP: &str = "degenerate_heatmap";

impl SampleScore {
    pub fn is_degenerate(&self) -> bool {
        self.flags.iter().any(|f| f == FLAG_DEGENERATE_HEATMAP)
    }
}

/// Partitions records by [`GroupKey`] and summarizes each group at `threshold`.
pub fn group_and_summarize(
    records: &[SampleScore],
    threshold: f64,
) -> Result<BTreeMap<GroupKey, EvalSummary>, AnalysisError> {
    let mut sorted: Vec<&SampleScore> = records.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let mut groups: BTreeMap<GroupKey, Vec<&SampleScore>> = BTreeMap::new();
    for r in sorted {
        let key = GroupKey::from_tags(&r.sample_id, &r.tags)?;
        groups.entry(key).or_default().push(r);
    }

    let summaries: Vec<(GroupKey, EvalSummary)> = groups
        .into_par_iter()
        .map(|(key, members)| {
            let tally: QuadrantTally = members
                .iter()
                .map(|r| classify_quadrant(r.correct, r.rma, threshold))
                .collect();
            let mut summary = metrics::summarize(tally, key.to_tags())
                .expect("every group has at least one member");
            summary.degenerate_heatmaps =
                members.iter().filter(|r| r.is_degenerate()).count() as u64;
            (key, summary)
        })
        .collect();
    Ok(summaries.into_iter().collect())
}

/// A metric trajectory over increasing corruption severity.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSeries {
    pub method: String,
    /// Empty for a method evaluated on clean data only.
    pub corruption: String,
    /// Strictly increasing severities; severity 0 is the clean point.
    pub points: Vec<(u32, EvalSummary)>,
}

/// One series per (method, corruption), with the method's clean summary
/// prepended as severity 0 when present. A method with only clean data gets
/// a single one-point series with an empty corruption.
pub fn build_sweeps(summaries: &BTreeMap<GroupKey, EvalSummary>) -> Vec<SweepSeries> {
    let methods: BTreeSet<&str> = summaries.keys().map(|k| k.method.as_str()).collect();
    let mut sweeps = Vec::new();
    for method in methods {
        let clean = summaries.get(&GroupKey::clean(method));
        let mut by_corruption: BTreeMap<&str, Vec<(u32, &EvalSummary)>> = BTreeMap::new();
        for (key, summary) in summaries
            .iter()
            .filter(|(k, _)| k.method == method && !k.is_clean())
        {
            by_corruption
                .entry(key.corruption.as_str())
                .or_default()
                .push((key.severity, summary));
        }
        if by_corruption.is_empty() {
            if let Some(clean) = clean {
                sweeps.push(SweepSeries {
                    method: method.to_string(),
                    corruption: String::new(),
                    points: vec![(0, clean.clone())],
                });
            }
            continue;
        }
        for (corruption, mut points) in by_corruption {
            points.sort_by_key(|(severity, _)| *severity);
            let mut series: Vec<(u32, EvalSummary)> = Vec::with_capacity(points.len() + 1);
            if let Some(clean) = clean {
                series.push((0, clean.clone()));
            }
            series.extend(points.into_iter().map(|(s, summary)| (s, summary.clone())));
            sweeps.push(SweepSeries {
                method: method.to_string(),
                corruption: corruption.to_string(),
                points: series,
            });
        }
    }
    sweeps
}
