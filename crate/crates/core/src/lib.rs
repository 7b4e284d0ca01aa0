//! Synthetic training data for semantic segmentation.
//!
//! Real images are captioned, pseudo-labelled with a detector and a
//! promptable segmenter, re-synthesized by a mask-conditioned generator,
//! filtered, and mixed back into training batches.

pub mod backends;
pub mod dataset;
pub mod fixture;
pub mod generate;
pub mod maskgen;
pub mod maskio;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod sample;
pub mod select;
pub mod taxonomy;
pub mod types;

pub use types::{BBox, RgbImage, SemanticMask, BACKGROUND, IGNORE_INDEX};
