//! Command-line interface.
//!
//! Settings come from flags, optionally layered over a JSON config file
//! (`--config`); a flag always wins over the file. Exit codes: 0 success,
//! 2 malformed input, 3 empty cohort, 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::analysis::ReportFormat;
use crate::attribution::{AttributionMethod, LayerMode};
use crate::pipeline::{self, EvalConfig, PipelineError};
use crate::synth::{self, PlantedCohortSpec, SynthError};
use crate::tensor_io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_EMPTY_COHORT: i32 = 3;

const ALL_FORMATS: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg];

#[derive(Debug, Parser)]
#[command(
    name = "rationality-eval",
    version,
    about = "Score explanation heatmaps against object masks and report prediction trustworthiness and inference reliability"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn attention/gradient captures into heatmap files and a rewritten manifest.
    Attribute(RunArgs),
    /// Score every sample and write per-sample scores plus grouped reports.
    Evaluate(RunArgs),
    /// Evaluate and write severity-sweep series (sweeps.json, sweeps.svg).
    Sweep(RunArgs),
    /// Re-render reports from a per-sample scores file.
    Report(RunArgs),
    /// Generate a planted synthetic cohort.
    Synth(SynthArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSONL manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Per-sample scores JSONL written by `evaluate` (report/sweep only).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RMA threshold for valid evidence (inclusive).
    #[arg(long)]
    pub theta: Option<f64>,
    /// Heatmap method for captures: eq2 or grad_only.
    #[arg(long)]
    pub attribution: Option<AttributionMethod>,
    /// Layer aggregation for captures: last or mean.
    #[arg(long = "layer-mode")]
    pub layer_mode: Option<LayerMode>,
    /// Also compute IoU with the heatmap binarized at this fraction of its max.
    #[arg(long = "iou-tau")]
    pub iou_tau: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report formats (comma-separated): json, csv, svg.
    #[arg(long, value_delimiter = ',')]
    pub format: Vec<ReportFormat>,
    /// Worker threads for per-sample work.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Cohort spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub manifest: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub theta: Option<f64>,
    pub attribution: Option<AttributionMethod>,
    pub layer_mode: Option<LayerMode>,
    pub iou_tau: Option<f64>,
    pub formats: Option<Vec<String>>,
    pub workers: Option<usize>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: PathBuf,
    pub eval: EvalConfig,
    pub formats: Vec<ReportFormat>,
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self, PipelineError> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let file_formats = file
            .formats
            .map(|fs| {
                fs.iter()
                    .map(|f| f.parse::<ReportFormat>())
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()
            .map_err(PipelineError::Config)?;
        let formats = if !args.format.is_empty() {
            args.format.clone()
        } else {
            file_formats.unwrap_or_else(|| ALL_FORMATS.to_vec())
        };
        let defaults = EvalConfig::default();
        let eval = EvalConfig {
            threshold: args.theta.or(file.theta).unwrap_or(defaults.threshold),
            attribution: args
                .attribution
                .or(file.attribution)
                .unwrap_or(defaults.attribution),
            layer_mode: args
                .layer_mode
                .or(file.layer_mode)
                .unwrap_or(defaults.layer_mode),
            iou_tau: args.iou_tau.or(file.iou_tau),
            workers: args.workers.or(file.workers).unwrap_or(defaults.workers),
        };
        eval.validate()?;
        let out = args
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| PipelineError::Config("missing --out".into()))?;
        Ok(Self {
            manifest: args.manifest.clone().or(file.manifest),
            scores: args.scores.clone().or(file.scores),
            out,
            eval,
            formats,
        })
    }

    fn require_manifest(&self) -> Result<&Path, PipelineError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| PipelineError::Config("missing --manifest".into()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Pipeline(PipelineError::EmptyCohort) => EXIT_EMPTY_COHORT,
            CliError::Pipeline(e) if e.is_input_error() => EXIT_BAD_INPUT,
            CliError::Synth(SynthError::InvalidSpec(_) | SynthError::InfeasibleTarget { .. }) => {
                EXIT_BAD_INPUT
            }
            _ => EXIT_FAILURE,
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn evaluate_scores(config: &RunConfig) -> Result<Vec<crate::analysis::SampleScore>, PipelineError> {
    let manifest = tensor_io::load_manifest(config.require_manifest()?)?;
    if manifest.is_empty() {
        return Err(PipelineError::EmptyCohort);
    }
    pipeline::evaluate_manifest(&manifest, &config.eval)
}

fn scores_from_file_or_manifest(
    config: &RunConfig,
) -> Result<Vec<crate::analysis::SampleScore>, PipelineError> {
    match &config.scores {
        Some(path) => pipeline::read_scores(path),
        None => evaluate_scores(config),
    }
}

pub fn cmd_attribute(config: &RunConfig) -> Result<(), PipelineError> {
    let manifest = tensor_io::load_manifest(config.require_manifest()?)?;
    create_dir(&config.out)?;
    let entries = pipeline::attribute_manifest(&manifest, &config.eval, &config.out)?;
    println!(
        "attributed {} samples -> {}",
        entries.len(),
        config.out.join("manifest.jsonl").display()
    );
    Ok(())
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<(), PipelineError> {
    let scores = evaluate_scores(config)?;
    create_dir(&config.out)?;
    let scores_path = config.out.join("scores.jsonl");
    pipeline::write_scores(&scores, &scores_path)?;
    let written = pipeline::write_reports(&scores, &config.eval, &config.formats, &config.out)?;
    println!(
        "evaluated {} samples -> {}",
        scores.len(),
        scores_path.display()
    );
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig) -> Result<(), PipelineError> {
    let scores = scores_from_file_or_manifest(config)?;
    for path in pipeline::write_sweeps(&scores, &config.eval, &config.out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_report(config: &RunConfig) -> Result<(), PipelineError> {
    let scores = scores_from_file_or_manifest(config)?;
    for path in pipeline::write_reports(&scores, &config.eval, &config.formats, &config.out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), SynthError> {
    let mut spec = PlantedCohortSpec::load(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let cohort = synth::gen_planted_cohort(&spec, &args.out)?;
    println!(
        "generated {} samples in {} groups -> {}",
        cohort.entries.len(),
        cohort.planted.len(),
        cohort.manifest_path.display()
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Attribute(args) => cmd_attribute(&RunConfig::resolve(args)?)?,
        Command::Evaluate(args) => cmd_evaluate(&RunConfig::resolve(args)?)?,
        Command::Sweep(args) => cmd_sweep(&RunConfig::resolve(args)?)?,
        Command::Report(args) => cmd_report(&RunConfig::resolve(args)?)?,
        Command::Synth(args) => cmd_synth(args)?,
    }
    Ok(())
}
