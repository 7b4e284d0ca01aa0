//! Model capabilities behind the pipeline: caption, detect, segment,
//! generate and embed.
//!
//! Each capability is a trait so stages can be driven by the HTTP client,
//! the deterministic mocks, or test doubles. [`Backends`] bundles one
//! implementation per capability.

mod http;
mod limit;
mod mock;
mod server;
pub mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::RgbImage;

pub use http::HttpBackend;
pub use limit::{Bounded, Semaphore};
pub use mock::{MockBackend, MockSettings};
pub use server::{dispatch, WireServer};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Network failure or 5xx after the retry budget was spent.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// 4xx or a request the backend will never accept.
    #[error("permanent backend failure: {0}")]
    Permanent(String),
    /// Response did not follow the wire schema.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transient(_) | BackendError::Timeout(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Caption,
    Detect,
    Segment,
    Generate,
    Embed,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::Caption,
        Capability::Detect,
        Capability::Segment,
        Capability::Generate,
        Capability::Embed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Capability::Caption => "caption",
            Capability::Detect => "detect",
            Capability::Segment => "segment",
            Capability::Generate => "generate",
            Capability::Embed => "embed",
        }
    }

    pub fn parse(name: &str) -> Option<Capability> {
        Capability::ALL.into_iter().find(|c| c.as_str() == name)
    }
}

/// Detector output before canonicalization and clamping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub xyxy: [f64; 4],
    pub label: String,
    pub score: f64,
}

/// Per-box segmenter output: image-sized, nonzero means foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn is_set(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateRequest {
    pub control: RgbImage,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub width: u32,
    pub height: u32,
}

pub trait CaptionBackend: Send + Sync {
    fn caption(&self, image: &RgbImage) -> Result<String, BackendError>;
}

pub trait DetectBackend: Send + Sync {
    fn detect(
        &self,
        image: &RgbImage,
        class_names: &[String],
        threshold: f64,
    ) -> Result<Vec<RawDetection>, BackendError>;
}

pub trait SegmentBackend: Send + Sync {
    fn segment(&self, image: &RgbImage, boxes: &[[f64; 4]]) -> Result<Vec<BinaryMask>, BackendError>;
}

pub trait GenerateBackend: Send + Sync {
    fn generate(&self, request: &GenerateRequest) -> Result<RgbImage, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, image: &RgbImage, model: &str) -> Result<Vec<f64>, BackendError>;
}

pub trait HealthBackend: Send + Sync {
    fn capabilities(&self) -> Result<Vec<Capability>, BackendError>;
}

/// One implementation per capability, cheap to clone and share across workers.
#[derive(Clone)]
pub struct Backends {
    pub caption: Arc<dyn CaptionBackend>,
    pub detect: Arc<dyn DetectBackend>,
    pub segment: Arc<dyn SegmentBackend>,
    pub generate: Arc<dyn GenerateBackend>,
    pub embed: Arc<dyn EmbedBackend>,
}

impl Backends {
    /// Uses one object for every capability.
    pub fn uniform<B>(backend: Arc<B>) -> Self
    where
        B: CaptionBackend
            + DetectBackend
            + SegmentBackend
            + GenerateBackend
            + EmbedBackend
            + 'static,
    {
        Self {
            caption: backend.clone(),
            detect: backend.clone(),
            segment: backend.clone(),
            generate: backend.clone(),
            embed: backend,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid backend config: {0}")]
pub struct BackendConfigError(pub String);

/// Connection policy for one HTTP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_initial_ms: u64,
    pub backoff_multiplier: f64,
    pub max_in_flight: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            timeout_secs: 120.0,
            max_retries: 3,
            backoff_initial_ms: 200,
            backoff_multiplier: 2.0,
            max_in_flight: 4,
            bearer_token: None,
        }
    }
}

impl BackendConfig {
    pub fn with_url(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendConfigError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(BackendConfigError("timeout_secs must be > 0".into()));
        }
        if self.max_in_flight < 1 {
            return Err(BackendConfigError("max_in_flight must be >= 1".into()));
        }
        if !(self.backoff_multiplier >= 1.0 && self.backoff_multiplier.is_finite()) {
            return Err(BackendConfigError("backoff_multiplier must be >= 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(BackendConfigError(format!(
                "base_url `{}` is not an http(s) URL",
                self.base_url
            )));
        }
        Ok(())
    }
}
