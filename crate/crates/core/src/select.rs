//! Two-stage filtering of generated variants.
//!
//! 1. Cosine filtration: keep a variant only if the cosine similarity of its
//!    embedding with the source image's embedding is strictly above `epsilon`.
//! 2. Mask matching: re-derive a pseudo-mask from the variant and compare it
//!    with the conditioning mask; keep only if their mIoU is at least `tau`.
//!
//! Matching is the expensive step (detector + segmenter calls), so it only
//! runs for variants that pass the cosine stage.

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends};
use crate::maskgen::{generate_pseudo_mask, MaskgenConfig, MaskgenError};
use crate::taxonomy::ClassTaxonomy;
use crate::types::{RgbImage, SemanticMask, BACKGROUND, IGNORE_INDEX};

pub const DEFAULT_EPSILON: f64 = 0.8;
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("embedding has zero norm")]
    ZeroVector,
    #[error("embedding dimension mismatch: {expected} vs {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding is empty or has non-finite entries")]
    InvalidEmbedding,
    #[error("threshold {0} out of range")]
    InvalidThreshold(f64),
    #[error("record has no variants to select from")]
    NoVariants,
    #[error("embedding the source image failed: {0}")]
    Backend(#[from] BackendError),
}

/// Image feature vector as served by the embed capability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SelectError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(SelectError::InvalidEmbedding);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy; zero vectors are rejected.
    pub fn normalized(&self) -> Result<Self, SelectError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(SelectError::ZeroVector);
        }
        Ok(Self(self.0.iter().map(|v| v / n).collect()))
    }
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SelectError> {
    if u.dim() != v.dim() {
        return Err(SelectError::DimensionMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(SelectError::ZeroVector);
    }
    let dot: f64 = u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineScore {
    pub score: f64,
    pub pass: bool,
}

/// Scores every variant against the source; `pass` iff `score > epsilon`.
pub fn cosine_filter(
    real: &EmbeddingVector,
    variants: &[EmbeddingVector],
    epsilon: f64,
) -> Result<Vec<CosineScore>, SelectError> {
    if epsilon.is_nan() {
        return Err(SelectError::InvalidThreshold(epsilon));
    }
    variants
        .iter()
        .map(|v| {
            let score = cosine_similarity(real, v)?;
            Ok(CosineScore {
                score,
                pass: score > epsilon,
            })
        })
        .collect()
}

/// mIoU of `pred` against `reference`, averaged over the foreground classes
/// present in `reference` (background only when it has no foreground).
/// Pixels where either map is ignore are skipped.
pub fn match_miou(pred: &SemanticMask, reference: &SemanticMask) -> Option<f64> {
    if !pred.same_extent(reference) {
        return None;
    }
    let mut classes = reference.foreground_classes();
    if classes.is_empty() {
        classes = vec![BACKGROUND];
    }
    let mut tp = [0u64; 256];
    let mut in_ref = [0u64; 256];
    let mut in_pred = [0u64; 256];
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        if p == IGNORE_INDEX || r == IGNORE_INDEX {
            continue;
        }
        in_ref[r as usize] += 1;
        in_pred[p as usize] += 1;
        if p == r {
            tp[r as usize] += 1;
        }
    }
    let sum: f64 = classes
        .iter()
        .map(|&c| {
            let c = c as usize;
            let union = in_ref[c] + in_pred[c] - tp[c];
            if union == 0 {
                0.0
            } else {
                tp[c] as f64 / union as f64
            }
        })
        .sum();
    Some(sum / classes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub miou: f64,
    pub pass: bool,
}

/// Re-segments `synthetic` and compares it to the conditioning mask.
pub fn mask_match(
    pseudo_mask: &SemanticMask,
    synthetic: &RgbImage,
    class_ids: &[u8],
    taxonomy: &ClassTaxonomy,
    backends: &Backends,
    maskgen: &MaskgenConfig,
    tau: f64,
) -> Result<MatchOutcome, MaskgenError> {
    let reference = pseudo_mask
        .resize_nearest(synthetic.width(), synthetic.height())
        .expect("synthetic image extent is valid");
    let predicted = generate_pseudo_mask(synthetic, class_ids, taxonomy, backends, maskgen)?;
    let miou = match_miou(&predicted.mask, &reference).expect("extents agree after resize");
    Ok(MatchOutcome {
        miou,
        pass: miou >= tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Kept,
    RejectedCosine,
    RejectedMatch,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub j: u32,
    /// Absent only when the variant could not be embedded.
    pub cosine_score: Option<f64>,
    pub match_miou: Option<f64>,
    pub decision: Decision,
    pub epsilon: f64,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl SelectionReport {
    /// Checks the decision against the recorded scores and thresholds.
    pub fn is_consistent(&self) -> bool {
        match self.decision {
            Decision::RejectedCosine => self.cosine_score.is_some_and(|c| !(c > self.epsilon)),
            Decision::RejectedMatch => {
                self.cosine_score.is_some_and(|c| c > self.epsilon)
                    && self.match_miou.is_some_and(|m| m < self.tau)
            }
            Decision::Kept => {
                self.cosine_score.is_some_and(|c| c > self.epsilon)
                    && self.match_miou.is_some_and(|m| m >= self.tau)
            }
            Decision::Skipped => self.reason.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub epsilon: f64,
    pub tau: f64,
    /// Passed through to the embed capability.
    pub embed_model: String,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            tau: DEFAULT_TAU,
            embed_model: "default".into(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        if self.epsilon.is_nan() {
            return Err(SelectError::InvalidThreshold(self.epsilon));
        }
        if self.tau.is_nan() {
            return Err(SelectError::InvalidThreshold(self.tau));
        }
        Ok(())
    }
}

fn embed(backends: &Backends, image: &RgbImage, model: &str) -> Result<EmbeddingVector, String> {
    let raw = backends.embed.embed(image, model).map_err(|e| e.to_string())?;
    EmbeddingVector::new(raw)
        .and_then(|v| v.normalized())
        .map_err(|e| e.to_string())
}

/// Runs both stages over a record's variants (`(j, image)` pairs).
///
/// Only a failure to embed the source image is an error; per-variant
/// failures become `Skipped` reports. Reports come back in ascending `j`.
#[allow(clippy::too_many_arguments)]
pub fn select(
    real_image: &RgbImage,
    pseudo_mask: &SemanticMask,
    class_ids: &[u8],
    variants: &[(u32, RgbImage)],
    taxonomy: &ClassTaxonomy,
    backends: &Backends,
    maskgen: &MaskgenConfig,
    config: &SelectionConfig,
) -> Result<Vec<SelectionReport>, SelectError> {
    config.validate()?;
    if variants.is_empty() {
        return Err(SelectError::NoVariants);
    }
    let real = backends.embed.embed(real_image, &config.embed_model)?;
    let real = EmbeddingVector::new(real)?.normalized()?;

    let mut ordered: Vec<&(u32, RgbImage)> = variants.iter().collect();
    ordered.sort_by_key(|(j, _)| *j);

    let report = |j, cosine_score, match_miou, decision, reason| SelectionReport {
        j,
        cosine_score,
        match_miou,
        decision,
        epsilon: config.epsilon,
        tau: config.tau,
        reason,
    };

    let mut reports = Vec::with_capacity(ordered.len());
    for (j, image) in ordered {
        let emb = match embed(backends, image, &config.embed_model) {
            Ok(e) => e,
            Err(err) => {
                warn!("variant {j}: embedding failed: {err}");
                reports.push(report(*j, None, None, Decision::Skipped, Some(err)));
                continue;
            }
        };
        let cos = match cosine_filter(&real, std::slice::from_ref(&emb), config.epsilon) {
            Ok(s) => s[0],
            Err(err) => {
                reports.push(report(*j, None, None, Decision::Skipped, Some(err.to_string())));
                continue;
            }
        };
        if !cos.pass {
            reports.push(report(*j, Some(cos.score), None, Decision::RejectedCosine, None));
            continue;
        }
        match mask_match(pseudo_mask, image, class_ids, taxonomy, backends, maskgen, config.tau) {
            Ok(m) => {
                let decision = if m.pass { Decision::Kept } else { Decision::RejectedMatch };
                reports.push(report(*j, Some(cos.score), Some(m.miou), decision, None));
            }
            Err(err) => {
                warn!("variant {j}: matching failed: {err}");
                reports.push(report(*j, Some(cos.score), None, Decision::Skipped, Some(err.to_string())));
            }
        }
    }
    if !reports.iter().any(|r| r.decision == Decision::Kept) {
        info!("no variant survived selection (epsilon {}, tau {})", config.epsilon, config.tau);
    }
    Ok(reports)
}
