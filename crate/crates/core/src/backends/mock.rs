//! Deterministic stand-ins for the five model services.
//!
//! * caption: fixture lookup by image digest, else `"an image of <classes>"`
//!   for the classes the colour detector finds.
//! * detect: fixture boxes by image digest, else colour keying against the
//!   taxonomy palette (the bounding box of pixels within `color_tolerance`
//!   of a class colour; score is the fill ratio of that box).
//! * segment: each box filled as a solid rectangle.
//! * generate: the control image blended with a seed-derived block pattern.
//!   The blend weight is itself drawn from the seed, in `[0, noise_strength)`,
//!   so variants of one record drift from the source by varying amounts.
//! * embed: L2-normalized 8x8 grayscale downsample.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wire::WireBox;
use super::{
    BackendError, BinaryMask, CaptionBackend, Capability, DetectBackend, EmbedBackend,
    GenerateBackend, GenerateRequest, HealthBackend, RawDetection, SegmentBackend,
};
use crate::taxonomy::ClassTaxonomy;
use crate::types::RgbImage;

pub const EMBED_GRID: u32 = 8;
const PATTERN_GRID: u32 = 8;
const CAPTION_SCORE_FLOOR: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    /// Upper bound of the per-variant blend weight toward the noise pattern.
    pub noise_strength: f64,
    /// Max per-channel distance for a pixel to count as a class colour.
    pub color_tolerance: u8,
    /// Fewer matching pixels than this yields no detection.
    pub min_pixels: u32,
    /// Image digest -> caption.
    pub caption_fixtures: BTreeMap<String, String>,
    /// Image digest -> detector boxes.
    pub box_fixtures: BTreeMap<String, Vec<WireBox>>,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            noise_strength: 0.5,
            color_tolerance: 40,
            min_pixels: 16,
            caption_fixtures: BTreeMap::new(),
            box_fixtures: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    taxonomy: ClassTaxonomy,
    settings: MockSettings,
}

impl MockBackend {
    pub fn new(taxonomy: ClassTaxonomy, settings: MockSettings) -> Self {
        Self { taxonomy, settings }
    }

    pub fn settings(&self) -> &MockSettings {
        &self.settings
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    /// Box around every pixel close to `rgb`, with its fill ratio as score.
    fn color_key(&self, image: &RgbImage, rgb: [u8; 3]) -> Option<([f64; 4], f64)> {
        let tol = self.settings.color_tolerance as i32;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut count = 0u64;
        for y in 0..image.height() {
            for x in 0..image.width() {
                let p = image.pixel(x, y);
                let close = (0..3).all(|c| (p[c] as i32 - rgb[c] as i32).abs() <= tol);
                if close {
                    count += 1;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if count < self.settings.min_pixels as u64 {
            return None;
        }
        let area = (x1 - x0) as f64 * (y1 - y0) as f64;
        Some(([x0 as f64, y0 as f64, x1 as f64, y1 as f64], count as f64 / area))
    }

    fn keyed_detections(&self, image: &RgbImage, ids: &[u8], threshold: f64) -> Vec<RawDetection> {
        ids.iter()
            .filter_map(|&id| {
                let entry = self.taxonomy.entry(id).ok()?;
                let (xyxy, score) = self.color_key(image, entry.rgb)?;
                (score >= threshold).then(|| RawDetection {
                    xyxy,
                    label: entry.name.clone(),
                    score,
                })
            })
            .collect()
    }
}

impl CaptionBackend for MockBackend {
    fn caption(&self, image: &RgbImage) -> Result<String, BackendError> {
        if let Some(caption) = self.settings.caption_fixtures.get(&image.digest()) {
            return Ok(caption.clone());
        }
        let ids: Vec<u8> = self.taxonomy.ids().collect();
        let found = self.keyed_detections(image, &ids, CAPTION_SCORE_FLOOR);
        if found.is_empty() {
            return Ok("an image".into());
        }
        let names: Vec<&str> = found.iter().map(|d| d.label.as_str()).collect();
        Ok(format!("an image of {}", names.join(", ")))
    }
}

impl DetectBackend for MockBackend {
    fn detect(
        &self,
        image: &RgbImage,
        class_names: &[String],
        threshold: f64,
    ) -> Result<Vec<RawDetection>, BackendError> {
        if let Some(boxes) = self.settings.box_fixtures.get(&image.digest()) {
            return Ok(boxes
                .iter()
                .filter(|b| b.score >= threshold)
                .map(|b| RawDetection {
                    xyxy: b.xyxy,
                    label: b.label.clone(),
                    score: b.score,
                })
                .collect());
        }
        let mut ids: Vec<u8> = class_names
            .iter()
            .filter_map(|n| self.taxonomy.canonicalize(n).ok())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        Ok(self.keyed_detections(image, &ids, threshold))
    }
}

impl SegmentBackend for MockBackend {
    fn segment(&self, image: &RgbImage, boxes: &[[f64; 4]]) -> Result<Vec<BinaryMask>, BackendError> {
        let (w, h) = (image.width(), image.height());
        boxes
            .iter()
            .map(|b| {
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(BackendError::Permanent(format!("non-finite box {b:?}")));
                }
                let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64);
                let x0 = clamp(b[0], w).floor() as u32;
                let x1 = clamp(b[2], w).ceil() as u32;
                let y0 = clamp(b[1], h).floor() as u32;
                let y1 = clamp(b[3], h).ceil() as u32;
                let mut data = vec![0u8; w as usize * h as usize];
                for y in y0..y1 {
                    let row = y as usize * w as usize;
                    data[row + x0 as usize..row + x1 as usize].fill(255);
                }
                Ok(BinaryMask {
                    width: w,
                    height: h,
                    data,
                })
            })
            .collect()
    }
}

impl GenerateBackend for MockBackend {
    fn generate(&self, request: &GenerateRequest) -> Result<RgbImage, BackendError> {
        let (w, h) = (request.width, request.height);
        let control = request
            .control
            .resize_nearest(w, h)
            .map_err(|e| BackendError::Permanent(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        let strength = self.settings.noise_strength.clamp(0.0, 1.0) * rng.gen::<f64>();
        let blocks: Vec<[u8; 3]> = (0..PATTERN_GRID * PATTERN_GRID)
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for y in 0..h {
            let by = y * PATTERN_GRID / h;
            for x in 0..w {
                let bx = x * PATTERN_GRID / w;
                let block = blocks[(by * PATTERN_GRID + bx) as usize];
                let src = control.pixel(x, y);
                for c in 0..3 {
                    let grain: i32 = rng.gen_range(-16..=16);
                    let pattern = (block[c] as i32 + grain).clamp(0, 255) as f64;
                    let v = (1.0 - strength) * src[c] as f64 + strength * pattern;
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        RgbImage::new(w, h, data).map_err(|e| BackendError::Permanent(e.to_string()))
    }
}

/// Area-averaged grayscale thumbnail, `EMBED_GRID` squared entries.
pub fn grayscale_thumbnail(image: &RgbImage) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let span = |cell: u32, extent: u32| {
        let start = cell * extent / EMBED_GRID;
        let end = ((cell + 1) * extent / EMBED_GRID).max(start + 1).min(extent);
        (start.min(extent - 1), end)
    };
    let mut out = Vec::with_capacity((EMBED_GRID * EMBED_GRID) as usize);
    for cy in 0..EMBED_GRID {
        let (y0, y1) = span(cy, h);
        for cx in 0..EMBED_GRID {
            let (x0, x1) = span(cx, w);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = image.pixel(x, y);
                    sum += 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                }
            }
            out.push(sum / ((x1 - x0) as f64 * (y1 - y0) as f64));
        }
    }
    out
}

impl EmbedBackend for MockBackend {
    fn embed(&self, image: &RgbImage, _model: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = grayscale_thumbnail(image);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

impl HealthBackend for MockBackend {
    fn capabilities(&self) -> Result<Vec<Capability>, BackendError> {
        Ok(Capability::ALL.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock() -> MockBackend {
        MockBackend::new(ClassTaxonomy::pascal_voc(), MockSettings::default())
    }

    fn scene() -> RgbImage {
        let mut img = RgbImage::filled(32, 32, [0, 0, 0]).unwrap();
        for y in 4..12 {
            for x in 8..20 {
                img.set_pixel(x, y, [0, 128, 128]); // bus
            }
        }
        img
    }

    #[test]
    fn colour_keying_finds_the_rectangle() {
        let found = mock().detect(&scene(), &["bus".into()], 0.35).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].xyxy, [8.0, 4.0, 20.0, 12.0]);
        assert_eq!(found[0].label, "bus");
        assert_eq!(found[0].score, 1.0);
        assert!(mock().detect(&scene(), &["cat".into()], 0.35).unwrap().is_empty());
    }

    #[test]
    fn caption_falls_back_to_detected_classes() {
        assert_eq!(mock().caption(&scene()).unwrap(), "an image of bus");
        let mut settings = MockSettings::default();
        settings
            .caption_fixtures
            .insert(scene().digest(), "a red bus parked next to a white bus".into());
        let m = MockBackend::new(ClassTaxonomy::pascal_voc(), settings);
        assert_eq!(m.caption(&scene()).unwrap(), "a red bus parked next to a white bus");
    }

    #[test]
    fn generation_is_a_pure_function_of_the_seed() {
        let req = GenerateRequest {
            control: scene(),
            prompt: "p".into(),
            negative_prompt: String::new(),
            seed: 99,
            steps: 50,
            guidance_scale: 7.5,
            width: 16,
            height: 24,
        };
        let a = mock().generate(&req).unwrap();
        let b = mock().generate(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.width(), a.height()), (16, 24));
        let c = mock().generate(&GenerateRequest { seed: 100, ..req }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn embedding_is_unit_norm() {
        let v = mock().embed(&scene(), "any").unwrap();
        assert_eq!(v.len(), 64);
        let n: f64 = v.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        // Images smaller than the grid still embed.
        let tiny = RgbImage::filled(3, 2, [9, 9, 9]).unwrap();
        assert_eq!(mock().embed(&tiny, "m").unwrap().len(), 64);
    }
}
