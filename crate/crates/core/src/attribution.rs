//! Explanation heatmaps from captured attention maps and their gradients.
//!
//! For one block with attention `A` (heads × T × T) and gradient `∇A` of the
//! explained class logit with respect to `A`, the relevance map is
//!
//! ```text
//! R[i][j] = mean_h max(0, ∇A[h][i][j] · A[h][i][j])
//! ```
//!
//! Negative contributions are clipped per head before the head mean. The
//! gradient-only variant applies the same clip-then-mean to `∇A` alone, so
//! both variants are on a comparable scale.
//!
//! A relevance map becomes a pixel heatmap by taking the classification
//! token's row, dropping non-image tokens, reshaping to the patch grid and
//! bilinearly resampling to the image size.

use serde::{Deserialize, Serialize};

use crate::resample;
use crate::tensor::{Tensor2, Tensor3};

/// Attention rows must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttributionError {
    #[error("shape mismatch: attention {attention:?} vs gradient {gradient:?}")]
    ShapeMismatch {
        attention: (usize, usize, usize),
        gradient: (usize, usize, usize),
    },
    #[error("relevance maps differ in shape: {0:?} vs {1:?}")]
    LayerShapeMismatch((usize, usize), (usize, usize)),
    #[error("no layers to aggregate")]
    EmptyLayerList,
    #[error("grid {grid:?} needs {} image tokens but the row has {image_tokens}", .grid.0 * .grid.1)]
    GridMismatch {
        grid: (usize, usize),
        image_tokens: usize,
    },
    #[error("token index {index} out of range for {tokens} tokens")]
    TokenOutOfRange { index: usize, tokens: usize },
    #[error("attention is not square per head: {0:?}")]
    NotSquare((usize, usize, usize)),
    #[error("layer {layer} head {head} row {row} sums to {sum}, not 1")]
    NotADistribution {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("heatmap value {value} at index {index} is negative or non-finite")]
    InvalidHeatmap { index: usize, value: f64 },
}

/// Which explanation to compute from a capture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    /// Head-mean of the clipped attention ⊙ gradient product.
    #[default]
    #[serde(rename = "eq2")]
    GradTimesAttention,
    /// Head-mean of the clipped gradient alone.
    GradOnly,
}

/// How per-layer relevance maps are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMode {
    /// Use the final layer only.
    #[default]
    Last,
    /// Elementwise mean over all captured layers.
    Mean,
}

impl std::str::FromStr for AttributionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eq2" => Ok(AttributionMethod::GradTimesAttention),
            "grad_only" | "grad-only" => Ok(AttributionMethod::GradOnly),
            other => Err(format!("unknown attribution {other:?} (eq2, grad_only)")),
        }
    }
}

impl std::str::FromStr for LayerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last" => Ok(LayerMode::Last),
            "mean" => Ok(LayerMode::Mean),
            other => Err(format!("unknown layer mode {other:?} (last, mean)")),
        }
    }
}

/// A token × token relevance map; every entry is ≥ 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap(Tensor2);

impl RelevanceMap {
    pub fn values(&self) -> &Tensor2 {
        &self.0
    }

    pub fn into_inner(self) -> Tensor2 {
        self.0
    }
}

/// A pixel-level explanation heatmap; every entry is finite and ≥ 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap(Tensor2);

impl Heatmap {
    pub fn new(values: Tensor2) -> Result<Self, AttributionError> {
        if let Some((index, &value)) = values
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(AttributionError::InvalidHeatmap { index, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor2 {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn into_inner(self) -> Tensor2 {
        self.0
    }

    /// Bilinearly resamples to `rows × cols`. Non-negativity is preserved.
    pub fn resized(&self, rows: usize, cols: usize) -> Heatmap {
        Heatmap(resample::bilinear(&self.0, rows, cols).map(|v| v.max(0.0)))
    }

    /// Multiplies every value by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Heatmap {
        assert!(factor > 0.0 && factor.is_finite());
        Heatmap(self.0.map(|v| v * factor))
    }
}

fn check_finite(t: &[f64], what: &'static str) -> Result<(), AttributionError> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AttributionError::NonFinite(what))
    }
}

/// Clip-then-head-mean of `f(h, idx)` over every head.
fn head_mean_positive(
    heads: usize,
    rows: usize,
    cols: usize,
    f: impl Fn(usize, usize) -> f64,
) -> RelevanceMap {
    let len = rows * cols;
    let mut acc = vec![0.0; len];
    for h in 0..heads {
        for (idx, slot) in acc.iter_mut().enumerate() {
            *slot += f(h, idx).max(0.0);
        }
    }
    let n = heads as f64;
    for v in &mut acc {
        *v /= n;
    }
    RelevanceMap(Tensor2::new(rows, cols, acc).expect("shape from a valid tensor"))
}

/// Relevance for one block: `mean_h (∇A ⊙ A)⁺`.
pub fn relevance_single_layer(
    attention: &Tensor3,
    gradient: &Tensor3,
) -> Result<RelevanceMap, AttributionError> {
    if attention.shape() != gradient.shape() {
        return Err(AttributionError::ShapeMismatch {
            attention: attention.shape(),
            gradient: gradient.shape(),
        });
    }
    check_finite(attention.data(), "attention")?;
    check_finite(gradient.data(), "gradient")?;
    let (heads, rows, cols) = attention.shape();
    Ok(head_mean_positive(heads, rows, cols, |h, idx| {
        gradient.head(h)[idx] * attention.head(h)[idx]
    }))
}

/// Relevance from the gradient alone: `mean_h (∇A)⁺`.
pub fn relevance_grad_only(gradient: &Tensor3) -> Result<RelevanceMap, AttributionError> {
    check_finite(gradient.data(), "gradient")?;
    let (heads, rows, cols) = gradient.shape();
    Ok(head_mean_positive(heads, rows, cols, |h, idx| {
        gradient.head(h)[idx]
    }))
}

pub fn aggregate_layers(
    maps: &[RelevanceMap],
    mode: LayerMode,
) -> Result<RelevanceMap, AttributionError> {
    let last = maps.last().ok_or(AttributionError::EmptyLayerList)?;
    let shape = last.0.shape();
    if let Some(bad) = maps.iter().find(|m| m.0.shape() != shape) {
        return Err(AttributionError::LayerShapeMismatch(bad.0.shape(), shape));
    }
    match mode {
        LayerMode::Last => Ok(last.clone()),
        LayerMode::Mean => {
            let mut acc = vec![0.0; shape.0 * shape.1];
            for m in maps {
                for (a, &v) in acc.iter_mut().zip(m.0.data()) {
                    *a += v;
                }
            }
            let n = maps.len() as f64;
            for a in &mut acc {
                *a /= n;
            }
            Ok(RelevanceMap(
                Tensor2::new(shape.0, shape.1, acc).expect("shape from a valid map"),
            ))
        }
    }
}

/// Projects the classification token's relevance row onto an image of
/// `out = (rows, cols)` pixels.
///
/// `non_image_tokens` lists every token position that is not an image patch
/// (it normally contains `cls_index` itself); the remaining entries of the
/// row are read row-major into a `grid.0 × grid.1` patch grid.
pub fn project_to_heatmap(
    relevance: &RelevanceMap,
    cls_index: usize,
    non_image_tokens: &[usize],
    grid: (usize, usize),
    out: (usize, usize),
) -> Result<Heatmap, AttributionError> {
    let values = &relevance.0;
    let tokens = values.cols();
    if cls_index >= values.rows() {
        return Err(AttributionError::TokenOutOfRange {
            index: cls_index,
            tokens: values.rows(),
        });
    }
    if let Some(&index) = non_image_tokens.iter().find(|&&t| t >= tokens) {
        return Err(AttributionError::TokenOutOfRange { index, tokens });
    }
    let patches: Vec<f64> = values
        .row(cls_index)
        .iter()
        .enumerate()
        .filter(|(j, _)| !non_image_tokens.contains(j))
        .map(|(_, &v)| v)
        .collect();
    if grid.0 == 0 || grid.1 == 0 || patches.len() != grid.0 * grid.1 {
        return Err(AttributionError::GridMismatch {
            grid,
            image_tokens: patches.len(),
        });
    }
    let patch_grid = Tensor2::new(grid.0, grid.1, patches).expect("length checked");
    let pixels = resample::bilinear(&patch_grid, out.0, out.1);
    Ok(Heatmap(pixels.map(|v| v.max(0.0))))
}

/// One sample's captured attention maps and gradients, in forward layer order.
#[derive(Clone, Debug)]
pub struct AttentionCapture {
    layers: Vec<(Tensor3, Tensor3)>,
    pub target_class: Option<u32>,
    pub cls_index: usize,
    pub grid: (usize, usize),
    pub non_image_tokens: Vec<usize>,
}

impl AttentionCapture {
    /// Validates shapes, token layout and that every attention row is a
    /// probability distribution.
    pub fn new(
        layers: Vec<(Tensor3, Tensor3)>,
        target_class: Option<u32>,
        cls_index: usize,
        grid: (usize, usize),
        non_image_tokens: Vec<usize>,
    ) -> Result<Self, AttributionError> {
        if layers.is_empty() {
            return Err(AttributionError::EmptyLayerList);
        }
        for (li, (a, g)) in layers.iter().enumerate() {
            if a.shape() != g.shape() {
                return Err(AttributionError::ShapeMismatch {
                    attention: a.shape(),
                    gradient: g.shape(),
                });
            }
            let (heads, rows, cols) = a.shape();
            if rows != cols {
                return Err(AttributionError::NotSquare(a.shape()));
            }
            check_finite(a.data(), "attention")?;
            check_finite(g.data(), "gradient")?;
            for h in 0..heads {
                for (row, chunk) in a.head(h).chunks_exact(cols).enumerate() {
                    let sum: f64 = chunk.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(AttributionError::NotADistribution {
                            layer: li,
                            head: h,
                            row,
                            sum,
                        });
                    }
                }
            }
        }
        let tokens = layers[0].0.rows();
        if let Some((a, _)) = layers.iter().find(|(a, _)| a.rows() != tokens) {
            return Err(AttributionError::LayerShapeMismatch(
                (a.rows(), a.cols()),
                (tokens, tokens),
            ));
        }
        if cls_index >= tokens {
            return Err(AttributionError::TokenOutOfRange {
                index: cls_index,
                tokens,
            });
        }
        let mut non_image_tokens = non_image_tokens;
        if !non_image_tokens.contains(&cls_index) {
            non_image_tokens.push(cls_index);
        }
        non_image_tokens.sort_unstable();
        non_image_tokens.dedup();
        if let Some(&index) = non_image_tokens.iter().find(|&&t| t >= tokens) {
            return Err(AttributionError::TokenOutOfRange { index, tokens });
        }
        let image_tokens = tokens - non_image_tokens.len();
        if grid.0 * grid.1 != image_tokens {
            return Err(AttributionError::GridMismatch { grid, image_tokens });
        }
        Ok(Self {
            layers,
            target_class,
            cls_index,
            grid,
            non_image_tokens,
        })
    }

    pub fn layers(&self) -> &[(Tensor3, Tensor3)] {
        &self.layers
    }

    pub fn tokens(&self) -> usize {
        self.layers[0].0.rows()
    }

    /// Per-layer relevance maps, aggregated by `mode`.
    pub fn relevance(
        &self,
        method: AttributionMethod,
        mode: LayerMode,
    ) -> Result<RelevanceMap, AttributionError> {
        let selected: &[(Tensor3, Tensor3)] = match mode {
            LayerMode::Last => &self.layers[self.layers.len() - 1..],
            LayerMode::Mean => &self.layers,
        };
        let maps = selected
            .iter()
            .map(|(a, g)| match method {
                AttributionMethod::GradTimesAttention => relevance_single_layer(a, g),
                AttributionMethod::GradOnly => relevance_grad_only(g),
            })
            .collect::<Result<Vec<_>, _>>()?;
        aggregate_layers(&maps, mode)
    }

    /// Full pipeline from capture to a `out.0 × out.1` heatmap.
    pub fn heatmap(
        &self,
        method: AttributionMethod,
        mode: LayerMode,
        out: (usize, usize),
    ) -> Result<Heatmap, AttributionError> {
        let relevance = self.relevance(method, mode)?;
        project_to_heatmap(
            &relevance,
            self.cls_index,
            &self.non_image_tokens,
            self.grid,
            out,
        )
    }
}
