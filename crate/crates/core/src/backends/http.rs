use std::io::Read;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::limit::Semaphore;
use super::wire::{self, *};
use super::{
    BackendConfig, BackendConfigError, BackendError, BinaryMask, CaptionBackend, Capability,
    DetectBackend, EmbedBackend, GenerateBackend, GenerateRequest, HealthBackend, RawDetection,
    SegmentBackend,
};
use crate::types::RgbImage;

/// Blocking client for a model service speaking the wire protocol.
///
/// Transport errors and 5xx responses are retried with exponential backoff;
/// 4xx responses and undecodable bodies fail immediately. Every endpoint is
/// read-style, so replaying a request is safe.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    permits: Semaphore,
    attempts: AtomicUsize,
}

enum Attempt {
    Retry(BackendError),
    Fail(BackendError),
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(inner) = source {
        if let Some(io) = inner.downcast_ref::<std::io::Error>() {
            return matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            );
        }
        source = inner.source();
    }
    err.to_string().contains("timed out")
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendConfigError> {
        config.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build();
        Ok(Self {
            permits: Semaphore::new(config.max_in_flight),
            config,
            agent,
            attempts: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Total HTTP attempts issued, retries included.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ms = self.config.backoff_initial_ms as f64 * self.config.backoff_multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(60_000.0) as u64)
    }

    fn attempt_once(&self, path: &str, body: Option<&str>) -> Result<String, Attempt> {
        let url = self.url(path);
        let mut request = match body {
            Some(_) => self.agent.post(&url).set("Content-Type", "application/json"),
            None => self.agent.get(&url),
        };
        if let Some(token) = &self.config.bearer_token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let result = {
            let _permit = self.permits.acquire();
            match body {
                Some(body) => request.send_string(body),
                None => request.call(),
            }
        };
        match result {
            Ok(response) => {
                let mut text = String::new();
                response
                    .into_reader()
                    .read_to_string(&mut text)
                    .map_err(|e| Attempt::Retry(BackendError::Transient(format!("{url}: reading body: {e}"))))?;
                Ok(text)
            }
            Err(ureq::Error::Status(code, response)) => {
                let detail = response.into_string().unwrap_or_default();
                let msg = format!("{url}: HTTP {code} {}", detail.trim());
                if code >= 500 || code == 429 {
                    Err(Attempt::Retry(BackendError::Transient(msg)))
                } else {
                    Err(Attempt::Fail(BackendError::Permanent(msg)))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = format!("{url}: {t}");
                if is_timeout(&t) {
                    Err(Attempt::Retry(BackendError::Timeout(msg)))
                } else {
                    match t.kind() {
                        ureq::ErrorKind::InvalidUrl | ureq::ErrorKind::UnknownScheme => {
                            Err(Attempt::Fail(BackendError::Permanent(msg)))
                        }
                        _ => Err(Attempt::Retry(BackendError::Transient(msg))),
                    }
                }
            }
        }
    }

    fn exchange(&self, path: &str, body: Option<&str>) -> Result<String, BackendError> {
        let mut retry = 0;
        loop {
            match self.attempt_once(path, body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fail(err)) => return Err(err),
                Err(Attempt::Retry(err)) => {
                    if retry >= self.config.max_retries {
                        return Err(err);
                    }
                    let wait = self.backoff(retry);
                    warn!(
                        "attempt {} of {} failed ({err}); retrying in {wait:?}",
                        retry + 1,
                        self.config.max_retries + 1
                    );
                    std::thread::sleep(wait);
                    retry += 1;
                }
            }
        }
    }

    fn decode<T: DeserializeOwned>(path: &str, text: &str) -> Result<T, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::Protocol(format!("{path}: {e}")))
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        request: &Req,
    ) -> Result<Resp, BackendError> {
        let body = serde_json::to_string(request).map_err(|e| BackendError::Permanent(e.to_string()))?;
        debug!("POST {path} ({} bytes)", body.len());
        let text = self.exchange(path, Some(&body))?;
        Self::decode(path, &text)
    }

    /// `GET /v1/health`. Unreachable services surface as [`BackendError::Timeout`].
    pub fn health(&self) -> Result<Vec<String>, BackendError> {
        let text = self.exchange(HEALTH_PATH, None).map_err(|e| match e {
            BackendError::Transient(msg) => BackendError::Timeout(msg),
            other => other,
        })?;
        Ok(Self::decode::<HealthResponse>(HEALTH_PATH, &text)?.capabilities)
    }
}

impl CaptionBackend for HttpBackend {
    fn caption(&self, image: &RgbImage) -> Result<String, BackendError> {
        let request = CaptionRequest {
            image: image_to_b64(image)?,
        };
        let response: CaptionResponse = self.post(CAPTION_PATH, &request)?;
        Ok(response.caption)
    }
}

impl DetectBackend for HttpBackend {
    fn detect(
        &self,
        image: &RgbImage,
        class_names: &[String],
        threshold: f64,
    ) -> Result<Vec<RawDetection>, BackendError> {
        let request = DetectRequest {
            image: image_to_b64(image)?,
            classes: class_names.to_vec(),
            threshold,
        };
        let response: DetectResponse = self.post(DETECT_PATH, &request)?;
        Ok(response
            .boxes
            .into_iter()
            .map(|b| RawDetection {
                xyxy: b.xyxy,
                label: b.label,
                score: b.score,
            })
            .collect())
    }
}

impl SegmentBackend for HttpBackend {
    fn segment(&self, image: &RgbImage, boxes: &[[f64; 4]]) -> Result<Vec<BinaryMask>, BackendError> {
        let request = SegmentRequest {
            image: image_to_b64(image)?,
            boxes: boxes.to_vec(),
        };
        let response: SegmentResponse = self.post(SEGMENT_PATH, &request)?;
        response.masks.iter().map(|m| wire::b64_to_mask(m)).collect()
    }
}

impl GenerateBackend for HttpBackend {
    fn generate(&self, request: &GenerateRequest) -> Result<RgbImage, BackendError> {
        let body = GenerateRequestBody {
            control: image_to_b64(&request.control)?,
            prompt: request.prompt.clone(),
            negative_prompt: request.negative_prompt.clone(),
            seed: request.seed,
            steps: request.steps,
            guidance_scale: request.guidance_scale,
            width: request.width,
            height: request.height,
        };
        let response: GenerateResponse = self.post(GENERATE_PATH, &body)?;
        b64_to_image(&response.image)
    }
}

impl EmbedBackend for HttpBackend {
    fn embed(&self, image: &RgbImage, model: &str) -> Result<Vec<f64>, BackendError> {
        let request = EmbedRequest {
            image: image_to_b64(image)?,
            model: model.to_string(),
        };
        let response: EmbedResponse = self.post(EMBED_PATH, &request)?;
        Ok(response.vector)
    }
}

impl HealthBackend for HttpBackend {
    fn capabilities(&self) -> Result<Vec<Capability>, BackendError> {
        let names = self.health()?;
        Ok(names.iter().filter_map(|n| Capability::parse(n)).collect())
    }
}
