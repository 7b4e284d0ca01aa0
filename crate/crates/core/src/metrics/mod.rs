//! Evaluation metrics: mIoU and pixel accuracy over label maps, FID over
//! feature statistics, and Inception Score over class-probability rows.

mod fid;
mod inception;
mod segmentation;

use thiserror::Error;

pub use fid::{feature_stats, fid, FeatureStats, PSD_TOLERANCE};
pub use inception::{inception_score, InceptionScore, NORMALIZATION_TOLERANCE};
pub use segmentation::{accumulate_confusion, miou, pixel_accuracy, ConfusionCounts, MiouResult};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} is outside [0, {num_classes}) and is not the ignore index")]
    ClassOutOfRange { label: u8, num_classes: usize },
    #[error("no evaluable pixels (everything is ignored)")]
    NoValidPixels,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} samples, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotNormalized { row: usize, sum: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}
