//! Prediction-rationality evaluation for image classifiers.
//!
//! The crate turns exported attention/gradient captures into explanation
//! heatmaps ([`attribution`]), scores them against ground-truth object masks
//! with relevant mass accuracy ([`metrics`]), sorts samples into the
//! accuracy × rationale quadrants, and reports prediction trustworthiness
//! and inference reliability per method, corruption and severity
//! ([`analysis`]).

pub mod analysis;
pub mod attribution;
pub mod cli;
pub mod metrics;
pub mod pipeline;
pub mod resample;
pub mod synth;
pub mod tensor;
pub mod tensor_io;

pub use attribution::{AttentionCapture, AttributionMethod, Heatmap, LayerMode, RelevanceMap};
pub use metrics::{EvalSummary, GroundTruthMask, Quadrant, QuadrantTally};
pub use tensor::{DType, Tensor, Tensor2, Tensor3};
