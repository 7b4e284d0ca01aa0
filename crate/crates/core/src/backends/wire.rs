//! JSON bodies of the model-service protocol. Images travel as base64 PNG.
//!
//! ```text
//! POST /v1/caption  {"image"}                                  -> {"caption"}
//! POST /v1/detect   {"image","classes","threshold"}            -> {"boxes":[{"xyxy","label","score"}]}
//! POST /v1/segment  {"image","boxes"}                          -> {"masks":[b64 gray PNG]}
//! POST /v1/generate {"control","prompt","negative_prompt","seed",
//!                    "steps","guidance_scale","width","height"} -> {"image"}
//! POST /v1/embed    {"image","model"}                          -> {"vector"}
//! GET  /v1/health                                              -> {"capabilities"}
//! ```
//!
//! Field order in these structs is the serialized order.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BackendError, BinaryMask};
use crate::maskio;
use crate::types::RgbImage;

pub const CAPTION_PATH: &str = "/v1/caption";
pub const DETECT_PATH: &str = "/v1/detect";
pub const SEGMENT_PATH: &str = "/v1/segment";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const EMBED_PATH: &str = "/v1/embed";
pub const HEALTH_PATH: &str = "/v1/health";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRequest {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub image: String,
    pub classes: Vec<String>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub xyxy: [f64; 4],
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<WireBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub image: String,
    pub boxes: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub masks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequestBody {
    pub control: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedRequest {
    pub image: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub fn image_to_b64(image: &RgbImage) -> Result<String, BackendError> {
    let png = maskio::encode_rgb_png(image).map_err(|e| BackendError::Permanent(e.to_string()))?;
    Ok(STANDARD.encode(png))
}

pub fn b64_to_image(text: &str) -> Result<RgbImage, BackendError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| BackendError::Protocol(format!("bad base64 image: {e}")))?;
    maskio::decode_rgb(&bytes).map_err(|e| BackendError::Protocol(format!("bad image payload: {e}")))
}

pub fn mask_to_b64(mask: &BinaryMask) -> Result<String, BackendError> {
    let png = maskio::encode_gray(mask.width, mask.height, &mask.data)
        .map_err(|e| BackendError::Permanent(e.to_string()))?;
    Ok(STANDARD.encode(png))
}

pub fn b64_to_mask(text: &str) -> Result<BinaryMask, BackendError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| BackendError::Protocol(format!("bad base64 mask: {e}")))?;
    let (width, height, data) = maskio::decode_gray(&bytes)
        .map_err(|e| BackendError::Protocol(format!("bad mask payload: {e}")))?;
    Ok(BinaryMask {
        width,
        height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_order_is_stable() {
        let body = GenerateRequestBody {
            control: "AA==".into(),
            prompt: "p".into(),
            negative_prompt: String::new(),
            seed: 7,
            steps: 50,
            guidance_scale: 7.5,
            width: 512,
            height: 512,
        };
        assert_eq!(
            serde_json::to_string(&body).unwrap(),
            r#"{"control":"AA==","prompt":"p","negative_prompt":"","seed":7,"steps":50,"guidance_scale":7.5,"width":512,"height":512}"#
        );
    }

    #[test]
    fn unknown_request_fields_are_rejected() {
        let r: Result<CaptionRequest, _> = serde_json::from_str(r#"{"image":"x","extra":1}"#);
        assert!(r.is_err());
    }

    #[test]
    fn image_payload_round_trip() {
        let img = RgbImage::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(b64_to_image(&image_to_b64(&img).unwrap()).unwrap(), img);
        assert!(matches!(b64_to_image("!!"), Err(BackendError::Protocol(_))));
    }
}
