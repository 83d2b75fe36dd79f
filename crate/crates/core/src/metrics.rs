//! Rationality metrics: ground-truth masks, relevant mass accuracy (RMA),
//! evidence validity, accuracy × rationale quadrants, prediction
//! trustworthiness (PT) and inference reliability (IR).
//!
//! ```text
//! RMA = Σ(H ⊙ M) / ΣH
//! valid evidence  ⇔  RMA ≥ θ            (θ = 0.5 by default)
//! PT  = RR / (RR + RW)
//! IR  = RR / (RR + WR)
//! ```
//!
//! PT and IR are undefined, never zero, when their denominator is empty.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::attribution::Heatmap;
use crate::tensor::Tensor2;

/// Default RMA threshold for valid evidence (inclusive).
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Default IoU binarization cutoff, as a fraction of the heatmap maximum.
pub const DEFAULT_IOU_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("heatmap shape {heatmap:?} does not match mask shape {mask:?}")]
    ShapeMismatch {
        heatmap: (usize, usize),
        mask: (usize, usize),
    },
    #[error("mask is not binary: element {index} is {value}")]
    MaskNotBinary { index: usize, value: f64 },
    #[error("cannot summarize an empty cohort")]
    EmptyCohort,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoxError {
    #[error("box {bbox} exceeds image bounds {width}x{height}")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("box {0} has zero or negative extent")]
    Degenerate(BBox),
    #[error("image size {0}x{1} is empty")]
    EmptyImage(u32, u32),
}

/// Pixel-aligned box covering `x_min ≤ x < x_max`, `y_min ≤ y < y_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), BoxError> {
        if width == 0 || height == 0 {
            return Err(BoxError::EmptyImage(width, height));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(BoxError::Degenerate(*self));
        }
        if self.x_max > width || self.y_max > height {
            return Err(BoxError::OutOfBounds {
                bbox: *self,
                width,
                height,
            });
        }
        Ok(())
    }
}

/// Binary object mask, `height × width`, values exactly 0.0 or 1.0.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthMask(Tensor2);

impl GroundTruthMask {
    pub fn new(values: Tensor2) -> Result<Self, MetricError> {
        if let Some((index, &value)) = values
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(MetricError::MaskNotBinary { index, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor2 {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn count_ones(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Union of boxes rasterized onto a `height × width` grid.
pub fn mask_from_bboxes(
    boxes: &[BBox],
    width: u32,
    height: u32,
) -> Result<GroundTruthMask, BoxError> {
    if width == 0 || height == 0 {
        return Err(BoxError::EmptyImage(width, height));
    }
    for b in boxes {
        b.validate(width, height)?;
    }
    let (w, h) = (width as usize, height as usize);
    let mut data = vec![0.0; w * h];
    for b in boxes {
        for y in b.y_min as usize..b.y_max as usize {
            data[y * w + b.x_min as usize..y * w + b.x_max as usize].fill(1.0);
        }
    }
    Ok(GroundTruthMask(
        Tensor2::new(h, w, data).expect("non-empty image"),
    ))
}

/// An RMA score. `degenerate` marks an all-zero heatmap, scored 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rma {
    pub score: f64,
    pub degenerate: bool,
}

fn same_shape(heatmap: &Heatmap, mask: &GroundTruthMask) -> Result<(), MetricError> {
    if heatmap.shape() != mask.shape() {
        return Err(MetricError::ShapeMismatch {
            heatmap: heatmap.shape(),
            mask: mask.shape(),
        });
    }
    Ok(())
}

/// Fraction of heatmap mass inside the mask.
///
/// Mass inside and outside the mask is accumulated separately in row-major
/// order and combined as `1 / (1 + outside / inside)`. Every step of that
/// expression is monotone under rounding, so shifting mass into the mask
/// can never lower the computed score, and a heatmap entirely inside
/// (outside) the mask scores exactly 1 (0).
pub fn rma(heatmap: &Heatmap, mask: &GroundTruthMask) -> Result<Rma, MetricError> {
    same_shape(heatmap, mask)?;
    let mut inside = 0.0f64;
    let mut outside = 0.0f64;
    for (&h, &m) in heatmap.values().data().iter().zip(mask.values().data()) {
        if m == 1.0 {
            inside += h;
        } else {
            outside += h;
        }
    }
    if inside == 0.0 && outside == 0.0 {
        return Ok(Rma {
            score: 0.0,
            degenerate: true,
        });
    }
    let score = if inside == 0.0 {
        0.0
    } else {
        1.0 / (1.0 + outside / inside)
    };
    Ok(Rma {
        score,
        degenerate: false,
    })
}

/// RMA after bilinearly resampling the heatmap to the mask's resolution
/// when the two differ.
pub fn rma_at_mask_resolution(
    heatmap: &Heatmap,
    mask: &GroundTruthMask,
) -> Result<Rma, MetricError> {
    if heatmap.shape() == mask.shape() {
        rma(heatmap, mask)
    } else {
        let (rows, cols) = mask.shape();
        rma(&heatmap.resized(rows, cols), mask)
    }
}

/// IoU between the heatmap binarized at `tau · max(H)` and the mask.
///
/// An all-zero heatmap binarizes to the empty set. An empty union scores 0.
pub fn iou(heatmap: &Heatmap, mask: &GroundTruthMask, tau: f64) -> Result<f64, MetricError> {
    same_shape(heatmap, mask)?;
    let values = heatmap.values().data();
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let cutoff = tau * max;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&h, &m) in values.iter().zip(mask.values().data()) {
        let on = max > 0.0 && h >= cutoff;
        let in_mask = m == 1.0;
        inter += usize::from(on && in_mask);
        union += usize::from(on || in_mask);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Prediction correctness × evidence validity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    /// Right prediction, right (valid) evidence.
    RR,
    /// Right prediction, wrong evidence.
    RW,
    /// Wrong prediction, right evidence.
    WR,
    /// Wrong prediction, wrong evidence.
    WW,
}

impl Quadrant {
    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::RR => "RR",
            Quadrant::RW => "RW",
            Quadrant::WR => "WR",
            Quadrant::WW => "WW",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Evidence is valid when `rma_score ≥ threshold`; the boundary counts as valid.
pub fn classify_quadrant(pred_correct: bool, rma_score: f64, threshold: f64) -> Quadrant {
    let valid = rma_score >= threshold;
    match (pred_correct, valid) {
        (true, true) => Quadrant::RR,
        (true, false) => Quadrant::RW,
        (false, true) => Quadrant::WR,
        (false, false) => Quadrant::WW,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuadrantTally {
    pub rr: u64,
    pub rw: u64,
    pub wr: u64,
    pub ww: u64,
}

impl QuadrantTally {
    pub fn new(rr: u64, rw: u64, wr: u64, ww: u64) -> Self {
        Self { rr, rw, wr, ww }
    }

    pub fn total(&self) -> u64 {
        self.rr + self.rw + self.wr + self.ww
    }

    pub fn record(&mut self, q: Quadrant) {
        match q {
            Quadrant::RR => self.rr += 1,
            Quadrant::RW => self.rw += 1,
            Quadrant::WR => self.wr += 1,
            Quadrant::WW => self.ww += 1,
        }
    }

    pub fn get(&self, q: Quadrant) -> u64 {
        match q {
            Quadrant::RR => self.rr,
            Quadrant::RW => self.rw,
            Quadrant::WR => self.wr,
            Quadrant::WW => self.ww,
        }
    }
}

impl AddAssign for QuadrantTally {
    fn add_assign(&mut self, other: Self) {
        self.rr += other.rr;
        self.rw += other.rw;
        self.wr += other.wr;
        self.ww += other.ww;
    }
}

impl FromIterator<Quadrant> for QuadrantTally {
    fn from_iter<I: IntoIterator<Item = Quadrant>>(iter: I) -> Self {
        let mut t = Self::default();
        for q in iter {
            t.record(q);
        }
        t
    }
}

/// Counts quadrants over `(pred_correct, rma_score)` records.
pub fn tally<I>(records: I, threshold: f64) -> QuadrantTally
where
    I: IntoIterator<Item = (bool, f64)>,
{
    records
        .into_iter()
        .map(|(correct, score)| classify_quadrant(correct, score, threshold))
        .collect()
}

/// Why a ratio metric has no value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum UndefinedMetric {
    #[error("no correct predictions (RR + RW = 0)")]
    NoCorrectPredictions,
    #[error("no samples with valid evidence (RR + WR = 0)")]
    NoValidEvidence,
}

/// Prediction trustworthiness, `RR / (RR + RW)`.
pub fn pt(t: &QuadrantTally) -> Result<f64, UndefinedMetric> {
    let denom = t.rr + t.rw;
    if denom == 0 {
        return Err(UndefinedMetric::NoCorrectPredictions);
    }
    Ok(t.rr as f64 / denom as f64)
}

/// Inference reliability, `RR / (RR + WR)`.
pub fn ir(t: &QuadrantTally) -> Result<f64, UndefinedMetric> {
    let denom = t.rr + t.wr;
    if denom == 0 {
        return Err(UndefinedMetric::NoValidEvidence);
    }
    Ok(t.rr as f64 / denom as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub tally: QuadrantTally,
    pub n: u64,
    pub accuracy: f64,
    pub pt: Result<f64, UndefinedMetric>,
    pub ir: Result<f64, UndefinedMetric>,
    pub valid_evidence_rate: f64,
    /// Samples whose heatmap had no mass at all.
    pub degenerate_heatmaps: u64,
    pub tags: BTreeMap<String, String>,
}

pub fn summarize(
    t: QuadrantTally,
    tags: BTreeMap<String, String>,
) -> Result<EvalSummary, MetricError> {
    let n = t.total();
    if n == 0 {
        return Err(MetricError::EmptyCohort);
    }
    Ok(EvalSummary {
        tally: t,
        n,
        accuracy: (t.rr + t.rw) as f64 / n as f64,
        pt: pt(&t),
        ir: ir(&t),
        valid_evidence_rate: (t.rr + t.wr) as f64 / n as f64,
        degenerate_heatmaps: 0,
        tags,
    })
}
