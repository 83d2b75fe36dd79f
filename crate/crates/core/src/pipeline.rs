//! Manifest-level workflows: attribute captures to heatmap files, score
//! samples, and write grouped reports.
//!
//! Per-sample work runs on a rayon pool; results are always collected in
//! `sample_id` order so outputs do not depend on scheduling or manifest order.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::{
    self, build_sweeps, emit_report, emit_sweep_report, AnalysisError, Provenance, ReportError,
    ReportFormat, SampleScore, FLAG_DEGENERATE_HEATMAP,
};
use crate::attribution::{
    AttentionCapture, AttributionError, AttributionMethod, Heatmap, LayerMode,
};
use crate::metrics::{
    self, classify_quadrant, mask_from_bboxes, BoxError, GroundTruthMask, MetricError,
};
use crate::tensor::Tensor3;
use crate::tensor_io::{
    self, CaptureSpec, Evidence, GroundTruth, Manifest, ManifestError, NpyError, SampleEntry,
};

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("{path}: {source}")]
    Npy { path: PathBuf, source: NpyError },
    #[error("{path}: expected a 3-D heads x tokens x tokens array, found shape {shape:?}")]
    NotAStack { path: PathBuf, shape: Vec<usize> },
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Box(#[from] BoxError),
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("sample {sample_id:?} (manifest line {line}): {source}")]
    Sample {
        sample_id: String,
        line: usize,
        source: SampleError,
    },
    #[error("scores line {line}: {message}")]
    Scores { line: usize, message: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("empty cohort: no samples to evaluate")]
    EmptyCohort,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl PipelineError {
    /// Whether the failure is attributable to the inputs rather than the
    /// environment.
    pub fn is_input_error(&self) -> bool {
        match self {
            PipelineError::Manifest(ManifestError::Io(_)) => false,
            PipelineError::Manifest(_)
            | PipelineError::Sample { .. }
            | PipelineError::Scores { .. }
            | PipelineError::Analysis(_)
            | PipelineError::Config(_) => true,
            PipelineError::EmptyCohort | PipelineError::Report(_) | PipelineError::Io { .. } => {
                false
            }
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub attribution: AttributionMethod,
    pub layer_mode: LayerMode,
    pub iou_tau: Option<f64>,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: metrics::DEFAULT_THRESHOLD,
            attribution: AttributionMethod::default(),
            layer_mode: LayerMode::default(),
            iou_tau: None,
            workers: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PipelineError::Config(format!(
                "theta {} is outside [0, 1]",
                self.threshold
            )));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config(
                "worker count must be at least 1".into(),
            ));
        }
        if let Some(tau) = self.iou_tau {
            if !(0.0..=1.0).contains(&tau) {
                return Err(PipelineError::Config(format!(
                    "iou tau {tau} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            threshold: self.threshold,
            attribution: self.attribution,
            layer_mode: self.layer_mode,
            iou_tau: self.iou_tau,
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

fn read_stack(path: PathBuf) -> Result<Tensor3, SampleError> {
    match tensor_io::read_npy(&path) {
        Ok(crate::tensor::Tensor::D3(t)) => Ok(t),
        Ok(other) => Err(SampleError::NotAStack {
            path,
            shape: other.shape(),
        }),
        Err(source) => Err(SampleError::Npy { path, source }),
    }
}

pub fn load_capture(
    manifest: &Manifest,
    spec: &CaptureSpec,
) -> Result<AttentionCapture, SampleError> {
    let layers = spec
        .layers
        .iter()
        .map(|l| {
            Ok((
                read_stack(manifest.resolve(&l.attention))?,
                read_stack(manifest.resolve(&l.gradient))?,
            ))
        })
        .collect::<Result<Vec<_>, SampleError>>()?;
    Ok(AttentionCapture::new(
        layers,
        spec.target_class,
        spec.cls_index,
        spec.grid,
        spec.non_image_tokens(),
    )?)
}

pub fn load_ground_truth(
    manifest: &Manifest,
    entry: &SampleEntry,
) -> Result<GroundTruthMask, SampleError> {
    match &entry.ground_truth {
        GroundTruth::Mask(p) => {
            let path = manifest.resolve(p);
            let values = tensor_io::read_binary_mask(&path)
                .map_err(|source| SampleError::Npy { path, source })?;
            Ok(GroundTruthMask::new(values)?)
        }
        GroundTruth::Boxes {
            boxes,
            width,
            height,
        } => Ok(mask_from_bboxes(boxes, *width, *height)?),
    }
}

/// The sample's heatmap, computed from its capture at `out` resolution when
/// the evidence is a capture.
pub fn load_heatmap(
    manifest: &Manifest,
    entry: &SampleEntry,
    config: &EvalConfig,
    out: (usize, usize),
) -> Result<Heatmap, SampleError> {
    match &entry.evidence {
        Evidence::Heatmap(p) => {
            let path = manifest.resolve(p);
            let values = tensor_io::read_npy_2d(&path)
                .map_err(|source| SampleError::Npy { path, source })?;
            Ok(Heatmap::new(values)?)
        }
        Evidence::Capture(spec) => {
            let capture = load_capture(manifest, spec)?;
            Ok(capture.heatmap(config.attribution, config.layer_mode, out)?)
        }
    }
}

pub fn evaluate_sample(
    manifest: &Manifest,
    entry: &SampleEntry,
    config: &EvalConfig,
) -> Result<SampleScore, SampleError> {
    let mask = load_ground_truth(manifest, entry)?;
    let heatmap = load_heatmap(manifest, entry, config, mask.shape())?;
    let heatmap = if heatmap.shape() == mask.shape() {
        heatmap
    } else {
        heatmap.resized(mask.shape().0, mask.shape().1)
    };
    let score = metrics::rma(&heatmap, &mask)?;
    let iou = config
        .iou_tau
        .map(|tau| metrics::iou(&heatmap, &mask, tau))
        .transpose()?;
    let correct = entry.is_correct();
    let mut flags = Vec::new();
    if score.degenerate {
        flags.push(FLAG_DEGENERATE_HEATMAP.to_string());
    }
    Ok(SampleScore {
        sample_id: entry.sample_id.clone(),
        true_class: entry.true_class,
        pred_class: entry.pred_class,
        correct,
        rma: score.score,
        quadrant: classify_quadrant(correct, score.score, config.threshold),
        flags,
        iou,
        tags: entry.tags.clone(),
    })
}

fn sample_error(entry: &SampleEntry) -> impl FnOnce(SampleError) -> PipelineError + '_ {
    move |source| PipelineError::Sample {
        sample_id: entry.sample_id.clone(),
        line: entry.line,
        source,
    }
}

/// Scores every sample, in `sample_id` order.
pub fn evaluate_manifest(
    manifest: &Manifest,
    config: &EvalConfig,
) -> Result<Vec<SampleScore>, PipelineError> {
    config.validate()?;
    let entries = manifest.sorted_entries();
    let results: Vec<Result<SampleScore, PipelineError>> = config.pool()?.install(|| {
        entries
            .par_iter()
            .map(|e| evaluate_sample(manifest, e, config).map_err(sample_error(e)))
            .collect()
    });
    results.into_iter().collect()
}

/// File-system-safe stem for a sample's output files.
fn file_stem(index: usize, sample_id: &str) -> String {
    let clean: String = sample_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .take(80)
        .collect();
    format!("{index:06}_{clean}")
}

fn absolute(manifest: &Manifest, path: &Path) -> PathBuf {
    let p = manifest.resolve(path);
    fs::canonicalize(&p).unwrap_or(p)
}

/// Computes heatmaps for capture entries, writes them to `out_dir/heatmaps`,
/// and writes `out_dir/manifest.jsonl` with heatmap evidence. Entries that
/// already carry a heatmap pass through. Input paths are rewritten as
/// absolute paths; new heatmap paths are relative to `out_dir`.
pub fn attribute_manifest(
    manifest: &Manifest,
    config: &EvalConfig,
    out_dir: &Path,
) -> Result<Vec<SampleEntry>, PipelineError> {
    config.validate()?;
    let heatmap_dir = out_dir.join("heatmaps");
    fs::create_dir_all(&heatmap_dir).map_err(io_error(&heatmap_dir))?;
    let entries = manifest.sorted_entries();

    let results: Vec<Result<SampleEntry, PipelineError>> = config.pool()?.install(|| {
        entries
            .par_iter()
            .enumerate()
            .map(|(index, entry)| {
                let ground_truth = match &entry.ground_truth {
                    GroundTruth::Mask(p) => GroundTruth::Mask(absolute(manifest, p)),
                    other => other.clone(),
                };
                let evidence = match &entry.evidence {
                    Evidence::Heatmap(p) => Evidence::Heatmap(absolute(manifest, p)),
                    Evidence::Capture(_) => {
                        let mask =
                            load_ground_truth(manifest, entry).map_err(sample_error(entry))?;
                        let heatmap = load_heatmap(manifest, entry, config, mask.shape())
                            .map_err(sample_error(entry))?;
                        let rel = PathBuf::from("heatmaps")
                            .join(format!("{}.npy", file_stem(index, &entry.sample_id)));
                        let path = out_dir.join(&rel);
                        tensor_io::write_npy(&heatmap.into_inner().into(), &path).map_err(|e| {
                            match e {
                                NpyError::Io(source) => PipelineError::Io {
                                    path: path.clone(),
                                    source,
                                },
                                other => PipelineError::Io {
                                    path: path.clone(),
                                    source: io::Error::other(other.to_string()),
                                },
                            }
                        })?;
                        Evidence::Heatmap(rel)
                    }
                };
                Ok(SampleEntry {
                    evidence,
                    ground_truth,
                    ..(*entry).clone()
                })
            })
            .collect()
    });
    let out: Vec<SampleEntry> = results.into_iter().collect::<Result<_, _>>()?;
    let manifest_path = out_dir.join("manifest.jsonl");
    tensor_io::write_manifest(&out, &manifest_path).map_err(io_error(&manifest_path))?;
    Ok(out)
}

pub fn write_scores(scores: &[SampleScore], path: &Path) -> Result<(), PipelineError> {
    let mut out = Vec::new();
    for s in scores {
        serde_json::to_writer(&mut out, s).expect("scores serialize");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(io_error(path))
}

pub fn read_scores(path: &Path) -> Result<Vec<SampleScore>, PipelineError> {
    let file = fs::File::open(path).map_err(io_error(path))?;
    let mut scores = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let score: SampleScore =
            serde_json::from_str(&line).map_err(|e| PipelineError::Scores {
                line: i + 1,
                message: e.to_string(),
            })?;
        if !(0.0..=1.0).contains(&score.rma) {
            return Err(PipelineError::Scores {
                line: i + 1,
                message: format!(
                    "rma {} is outside [0, 1] for sample {:?}",
                    score.rma, score.sample_id
                ),
            });
        }
        scores.push(score);
    }
    Ok(scores)
}

/// Groups scores, writes `report.<ext>` for each format, and returns the
/// written paths.
pub fn write_reports(
    scores: &[SampleScore],
    config: &EvalConfig,
    formats: &[ReportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    if scores.is_empty() {
        return Err(PipelineError::EmptyCohort);
    }
    let groups = analysis::group_and_summarize(scores, config.threshold)?;
    let sweeps = build_sweeps(&groups);
    let provenance = config.provenance();
    fs::create_dir_all(out_dir).map_err(io_error(out_dir))?;
    let mut written = Vec::new();
    for &format in formats {
        let bytes = emit_report(&groups, &sweeps, format, &provenance)?;
        let path = out_dir.join(format!("report.{}", format.extension()));
        fs::write(&path, bytes).map_err(io_error(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `sweeps.json` and `sweeps.svg`.
pub fn write_sweeps(
    scores: &[SampleScore],
    config: &EvalConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    if scores.is_empty() {
        return Err(PipelineError::EmptyCohort);
    }
    let groups = analysis::group_and_summarize(scores, config.threshold)?;
    let sweeps = build_sweeps(&groups);
    fs::create_dir_all(out_dir).map_err(io_error(out_dir))?;
    let json_path = out_dir.join("sweeps.json");
    fs::write(
        &json_path,
        emit_sweep_report(&sweeps, &config.provenance())?,
    )
    .map_err(io_error(&json_path))?;
    let svg_path = out_dir.join("sweeps.svg");
    let svg = emit_report(&groups, &sweeps, ReportFormat::Svg, &config.provenance())?;
    fs::write(&svg_path, svg).map_err(io_error(&svg_path))?;
    Ok(vec![json_path, svg_path])
}
