//! Synthetic cohorts with known answers.
//!
//! [`gen_heatmap_with_rma`] inverts the RMA formula: it spreads mass `ρ`
//! over the mask and `1 − ρ` outside it. [`gen_planted_cohort`] writes a
//! full manifest + npy cohort whose evaluation reproduces a chosen quadrant
//! tally per group. [`brute_force_rma`] is an independent scalar restatement
//! of RMA used as a test oracle.
//!
//! # Random stream
//!
//! Generation uses SplitMix64 so any implementation can reproduce a cohort
//! from its seed:
//!
//! ```text
//! state ← state + 0x9E3779B97F4A7C15          (wrapping)
//! z ← state
//! z ← (z ⊕ (z >> 30)) · 0xBF58476D1CE4E5B9    (wrapping)
//! z ← (z ⊕ (z >> 27)) · 0x94D049BB133111EB    (wrapping)
//! output z ⊕ (z >> 31)
//! ```
//!
//! Uniform floats are `(u64 >> 11) · 2⁻⁵³` in `[0, 1)`; bounded integers are
//! `u64 mod n`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::GroupKey;
use crate::attribution::Heatmap;
use crate::metrics::{BBox, GroundTruthMask, Quadrant, QuadrantTally};
use crate::tensor::Tensor2;
use crate::tensor_io::{self, Evidence, GroundTruth, NpyError, SampleEntry};

/// Planted RMA draws stay this far from the 0.5 validity threshold.
pub const THRESHOLD_MARGIN: f64 = 0.05;

const CLASS_COUNT: u64 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("target rma {rho} is infeasible for a mask with {ones} of {pixels} pixels set")]
    InfeasibleTarget {
        rho: f64,
        ones: usize,
        pixels: usize,
    },
    #[error("target rma {0} is outside [0, 1]")]
    InvalidTarget(f64),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// SplitMix64 generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform-ish in `0..n` (`n > 0`).
    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}

/// Heatmap with `rma(H, M) = rho` up to rounding.
pub fn gen_heatmap_with_rma(
    rho: f64,
    mask: &GroundTruthMask,
    seed: u64,
) -> Result<Heatmap, SynthError> {
    heatmap_with_rma(rho, mask, &mut SplitMix64::new(seed))
}

fn heatmap_with_rma(
    rho: f64,
    mask: &GroundTruthMask,
    rng: &mut SplitMix64,
) -> Result<Heatmap, SynthError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(SynthError::InvalidTarget(rho));
    }
    let values = mask.values().data();
    let ones = mask.count_ones();
    let zeros = values.len() - ones;
    if (rho > 0.0 && ones == 0) || (rho < 1.0 && zeros == 0) {
        return Err(SynthError::InfeasibleTarget {
            rho,
            ones,
            pixels: values.len(),
        });
    }
    // Jitter weights in [0.5, 1.5), normalized within each region.
    let weights: Vec<f64> = values.iter().map(|_| 0.5 + rng.next_f64()).collect();
    let (mut w_in, mut w_out) = (0.0, 0.0);
    for (&w, &m) in weights.iter().zip(values) {
        if m == 1.0 {
            w_in += w;
        } else {
            w_out += w;
        }
    }
    let data = weights
        .iter()
        .zip(values)
        .map(|(&w, &m)| {
            if m == 1.0 {
                rho * w / w_in
            } else {
                (1.0 - rho) * w / w_out
            }
        })
        .collect();
    let (rows, cols) = mask.shape();
    Ok(
        Heatmap::new(Tensor2::new(rows, cols, data).expect("mask shape"))
            .expect("non-negative by construction"),
    )
}

/// Naive per-pixel RMA: `Σ h·m / Σ h`, zero when `Σ h = 0`.
pub fn brute_force_rma(heatmap: &Tensor2, mask: &Tensor2) -> Result<f64, SynthError> {
    if heatmap.shape() != mask.shape() {
        return Err(SynthError::ShapeMismatch(heatmap.shape(), mask.shape()));
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for r in 0..heatmap.rows() {
        for c in 0..heatmap.cols() {
            numerator += heatmap.get(r, c) * mask.get(r, c);
            denominator += heatmap.get(r, c);
        }
    }
    Ok(if denominator == 0.0 {
        0.0
    } else {
        numerator / denominator
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub method: String,
    #[serde(default)]
    pub corruption: String,
    #[serde(default)]
    pub severity: u32,
    pub tally: QuadrantTally,
}

impl PlantedGroup {
    pub fn key(&self) -> GroupKey {
        GroupKey {
            method: self.method.clone(),
            corruption: self.corruption.clone(),
            severity: self.severity,
        }
    }
}

/// What to generate: image size, seed and the planted tally of every group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedCohortSpec {
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub groups: Vec<PlantedGroup>,
}

impl PlantedCohortSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }

    /// Builds a full grid: every method on clean data plus every corruption
    /// at severities `1..=severities`, each group with the same tally.
    pub fn grid(
        methods: &[&str],
        corruptions: &[&str],
        severities: u32,
        tally: QuadrantTally,
        size: u32,
        seed: u64,
    ) -> Self {
        let mut groups = Vec::new();
        for m in methods {
            groups.push(PlantedGroup {
                method: m.to_string(),
                corruption: String::new(),
                severity: 0,
                tally,
            });
            for c in corruptions {
                for s in 1..=severities {
                    groups.push(PlantedGroup {
                        method: m.to_string(),
                        corruption: c.to_string(),
                        severity: s,
                        tally,
                    });
                }
            }
        }
        Self {
            width: size,
            height: size,
            seed,
            groups,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 2 || self.height < 2 {
            return Err(SynthError::InvalidSpec(format!(
                "image must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        let mut seen = BTreeMap::new();
        for (i, g) in self.groups.iter().enumerate() {
            let key = GroupKey::from_tags("<spec>", &g.key().to_tags())
                .ok()
                .filter(|k| *k == g.key())
                .ok_or_else(|| {
                    SynthError::InvalidSpec(format!(
                        "group {i}: needs a method, and severity 0 exactly when corruption is empty"
                    ))
                })?;
            if let Some(prev) = seen.insert(key, i) {
                return Err(SynthError::InvalidSpec(format!(
                    "groups {prev} and {i} share a key"
                )));
            }
        }
        Ok(())
    }

    pub fn planted(&self) -> BTreeMap<GroupKey, QuadrantTally> {
        self.groups.iter().map(|g| (g.key(), g.tally)).collect()
    }
}

/// Result of writing a planted cohort.
#[derive(Clone, Debug)]
pub struct PlantedCohort {
    pub manifest_path: PathBuf,
    pub entries: Vec<SampleEntry>,
    pub planted: BTreeMap<GroupKey, QuadrantTally>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn npy_err(path: &Path, e: NpyError) -> SynthError {
    match e {
        NpyError::Io(source) => SynthError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => SynthError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(other.to_string()),
        },
    }
}

/// Writes `manifest.jsonl`, `heatmaps/*.npy` and `masks/*.npy` under `out_dir`.
///
/// Right-evidence samples draw their RMA from `[0.55, 1)`, wrong-evidence
/// samples from `[0, 0.45)`. Ground truth alternates at random between mask
/// files and bounding boxes.
pub fn gen_planted_cohort(
    spec: &PlantedCohortSpec,
    out_dir: impl AsRef<Path>,
) -> Result<PlantedCohort, SynthError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let heatmap_dir = out_dir.join("heatmaps");
    let mask_dir = out_dir.join("masks");
    fs::create_dir_all(&heatmap_dir).map_err(io_err(&heatmap_dir))?;
    fs::create_dir_all(&mask_dir).map_err(io_err(&mask_dir))?;

    let mut rng = SplitMix64::new(spec.seed);
    let (width, height) = (spec.width, spec.height);
    let mut entries = Vec::new();
    let mut serial = 0usize;
    for group in &spec.groups {
        let key = group.key();
        let quadrants = [Quadrant::RR, Quadrant::RW, Quadrant::WR, Quadrant::WW]
            .into_iter()
            .flat_map(|q| std::iter::repeat_n(q, group.tally.get(q) as usize));
        for (i, quadrant) in quadrants.enumerate() {
            let sample_id = format!(
                "{}/{}/{}/{:06}",
                key.method,
                if key.is_clean() {
                    "clean"
                } else {
                    &key.corruption
                },
                key.severity,
                i
            );
            let correct = matches!(quadrant, Quadrant::RR | Quadrant::RW);
            let valid = matches!(quadrant, Quadrant::RR | Quadrant::WR);

            let box_w = 1 + rng.below(u64::from(width) - 1) as u32;
            let box_h = 1 + rng.below(u64::from(height) - 1) as u32;
            let x_min = rng.below(u64::from(width - box_w) + 1) as u32;
            let y_min = rng.below(u64::from(height - box_h) + 1) as u32;
            let bbox = BBox::new(x_min, y_min, x_min + box_w, y_min + box_h);
            let mask = crate::metrics::mask_from_bboxes(&[bbox], width, height)
                .expect("box inside the image by construction");

            let u = rng.next_f64();
            let margin = crate::metrics::DEFAULT_THRESHOLD - THRESHOLD_MARGIN;
            let rho = if valid { 1.0 - margin * u } else { margin * u };
            let heatmap = heatmap_with_rma(rho, &mask, &mut rng)?;

            let true_class = rng.below(CLASS_COUNT) as u32;
            let pred_class = if correct {
                true_class
            } else {
                ((u64::from(true_class) + 1 + rng.below(CLASS_COUNT - 1)) % CLASS_COUNT) as u32
            };

            let file = format!("{serial:06}.npy");
            let heatmap_rel = PathBuf::from("heatmaps").join(&file);
            let heatmap_path = out_dir.join(&heatmap_rel);
            tensor_io::write_npy(&heatmap.into_inner().into(), &heatmap_path)
                .map_err(|e| npy_err(&heatmap_path, e))?;

            let ground_truth = if rng.next_u64() & 1 == 0 {
                let mask_rel = PathBuf::from("masks").join(&file);
                let mask_path = out_dir.join(&mask_rel);
                tensor_io::write_npy(&mask.values().clone().into_f32().into(), &mask_path)
                    .map_err(|e| npy_err(&mask_path, e))?;
                GroundTruth::Mask(mask_rel)
            } else {
                GroundTruth::Boxes {
                    boxes: vec![bbox],
                    width,
                    height,
                }
            };

            entries.push(SampleEntry {
                sample_id,
                true_class,
                pred_class,
                evidence: Evidence::Heatmap(heatmap_rel),
                ground_truth,
                tags: key.to_tags(),
                line: entries.len() + 1,
            });
            serial += 1;
        }
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    tensor_io::write_manifest(&entries, &manifest_path).map_err(io_err(&manifest_path))?;
    Ok(PlantedCohort {
        manifest_path,
        entries,
        planted: spec.planted(),
    })
}
