//! Pseudo-label construction: open-vocabulary detection, box-prompted
//! segmentation, then fusion of the instances into one semantic mask.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, BinaryMask, DetectBackend, SegmentBackend};
use crate::taxonomy::ClassTaxonomy;
use crate::types::{BBox, RgbImage, SemanticMask, BACKGROUND};

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.35;
/// Segmenter foreground further than this from its box is discarded.
pub const BOX_DILATION_PX: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MaskgenError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("detector returned label `{0}` outside the queried classes")]
    UnknownClass(String),
    #[error("segmenter returned a {got_w}x{got_h} mask for a {want_w}x{want_h} image")]
    ShapeMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("segmenter returned {got} masks for {want} boxes")]
    CountMismatch { want: usize, got: usize },
    #[error("score threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("no class names to query")]
    NoClasses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub bbox: BBox,
    /// Image-sized binary map.
    pub mask: BinaryMask,
    pub class_id: u8,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Detector + segmenter output.
    #[default]
    Pseudo,
    /// Human annotation when the corpus has one; pseudo otherwise.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskgenConfig {
    pub score_threshold: f64,
    pub mask_source: MaskSource,
}

impl Default for MaskgenConfig {
    fn default() -> Self {
        Self {
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            mask_source: MaskSource::Pseudo,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMask {
    pub mask: SemanticMask,
    /// Boxes that survived the threshold, in detector order.
    pub detections: Vec<BBox>,
    /// No box survived; the mask is all background.
    pub empty_detection: bool,
}

pub fn detect_objects(
    image: &RgbImage,
    class_names: &[String],
    taxonomy: &ClassTaxonomy,
    detector: &dyn DetectBackend,
    score_threshold: f64,
) -> Result<Vec<BBox>, MaskgenError> {
    if !(0.0..=1.0).contains(&score_threshold) {
        return Err(MaskgenError::InvalidThreshold(score_threshold));
    }
    if class_names.is_empty() {
        return Err(MaskgenError::NoClasses);
    }
    let queried: Vec<u8> = class_names
        .iter()
        .filter_map(|n| taxonomy.canonicalize(n).ok())
        .collect();
    let raw = detector.detect(image, class_names, score_threshold)?;
    let mut boxes = Vec::with_capacity(raw.len());
    for det in raw {
        let id = taxonomy
            .canonicalize(&det.label)
            .ok()
            .filter(|id| queried.contains(id))
            .ok_or_else(|| MaskgenError::UnknownClass(det.label.clone()))?;
        // NaN scores fail this comparison and are dropped.
        if !(det.score >= score_threshold) {
            continue;
        }
        if let Some(b) = BBox::from_xyxy_clamped(det.xyxy, image.width(), image.height(), det.score, id) {
            boxes.push(b);
        }
    }
    Ok(boxes)
}

pub fn segment_boxes(
    image: &RgbImage,
    boxes: &[BBox],
    segmenter: &dyn SegmentBackend,
) -> Result<Vec<InstanceMask>, MaskgenError> {
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    let (w, h) = (image.width(), image.height());
    let prompts: Vec<[f64; 4]> = boxes.iter().map(BBox::xyxy).collect();
    let masks = segmenter.segment(image, &prompts)?;
    if masks.len() != boxes.len() {
        return Err(MaskgenError::CountMismatch {
            want: boxes.len(),
            got: masks.len(),
        });
    }
    boxes
        .iter()
        .zip(masks)
        .map(|(bbox, mut mask)| {
            if mask.width != w || mask.height != h || mask.data.len() != w as usize * h as usize {
                return Err(MaskgenError::ShapeMismatch {
                    want_w: w,
                    want_h: h,
                    got_w: mask.width,
                    got_h: mask.height,
                });
            }
            let x0 = bbox.x_min.saturating_sub(BOX_DILATION_PX);
            let y0 = bbox.y_min.saturating_sub(BOX_DILATION_PX);
            let x1 = (bbox.x_max + BOX_DILATION_PX).min(w);
            let y1 = (bbox.y_max + BOX_DILATION_PX).min(h);
            for y in 0..h {
                for x in 0..w {
                    let i = y as usize * w as usize + x as usize;
                    if !(x >= x0 && x < x1 && y >= y0 && y < y1) {
                        mask.data[i] = 0;
                    } else if mask.data[i] != 0 {
                        mask.data[i] = 255;
                    }
                }
            }
            Ok(InstanceMask {
                bbox: *bbox,
                mask,
                class_id: bbox.class_id,
                score: bbox.score,
            })
        })
        .collect()
}

/// Each pixel takes the class of the highest-scoring instance covering it;
/// equal scores go to the earlier instance. Uncovered pixels are background.
pub fn merge_instances(instances: &[InstanceMask], width: u32, height: u32) -> SemanticMask {
    let n = width as usize * height as usize;
    let mut labels = vec![BACKGROUND; n];
    let mut best = vec![f64::NEG_INFINITY; n];
    for inst in instances {
        if inst.mask.width != width || inst.mask.height != height {
            continue;
        }
        for (i, &v) in inst.mask.data.iter().enumerate() {
            if v != 0 && inst.score > best[i] {
                best[i] = inst.score;
                labels[i] = inst.class_id;
            }
        }
    }
    SemanticMask::new(width, height, labels).expect("extent matches buffer")
}

/// Detect, segment and fuse. Zero surviving boxes is reported through
/// `empty_detection`, not as an error.
pub fn generate_pseudo_mask(
    image: &RgbImage,
    class_ids: &[u8],
    taxonomy: &ClassTaxonomy,
    backends: &Backends,
    config: &MaskgenConfig,
) -> Result<PseudoMask, MaskgenError> {
    let names: Vec<String> = if class_ids.is_empty() {
        taxonomy.classes().iter().map(|c| c.name.clone()).collect()
    } else {
        class_ids
            .iter()
            .filter_map(|&id| taxonomy.name(id).ok().map(str::to_string))
            .collect()
    };
    let boxes = detect_objects(
        image,
        &names,
        taxonomy,
        backends.detect.as_ref(),
        config.score_threshold,
    )?;
    if boxes.is_empty() {
        return Ok(PseudoMask {
            mask: SemanticMask::background(image.width(), image.height())
                .expect("image extent is valid"),
            detections: Vec::new(),
            empty_detection: true,
        });
    }
    let instances = segment_boxes(image, &boxes, backends.segment.as_ref())?;
    let mask = merge_instances(&instances, image.width(), image.height());
    Ok(PseudoMask {
        mask,
        detections: boxes,
        empty_detection: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MockBackend, MockSettings, RawDetection};
    use std::sync::Arc;

    struct FixedDetector(Vec<RawDetection>);

    impl DetectBackend for FixedDetector {
        fn detect(&self, _: &RgbImage, _: &[String], _: f64) -> Result<Vec<RawDetection>, BackendError> {
            Ok(self.0.clone())
        }
    }

    struct WrongSize;

    impl SegmentBackend for WrongSize {
        fn segment(&self, _: &RgbImage, boxes: &[[f64; 4]]) -> Result<Vec<BinaryMask>, BackendError> {
            Ok(boxes
                .iter()
                .map(|_| BinaryMask {
                    width: 3,
                    height: 3,
                    data: vec![0; 9],
                })
                .collect())
        }
    }

    fn voc() -> ClassTaxonomy {
        ClassTaxonomy::pascal_voc()
    }

    fn det(xyxy: [f64; 4], label: &str, score: f64) -> RawDetection {
        RawDetection {
            xyxy,
            label: label.into(),
            score,
        }
    }

    fn rect(class_id: u8, score: f64, b: (u32, u32, u32, u32), w: u32, h: u32) -> InstanceMask {
        let mut data = vec![0u8; (w * h) as usize];
        for y in b.1..b.3 {
            for x in b.0..b.2 {
                data[(y * w + x) as usize] = 255;
            }
        }
        InstanceMask {
            bbox: BBox {
                x_min: b.0,
                y_min: b.1,
                x_max: b.2,
                y_max: b.3,
                score,
                class_id,
            },
            mask: BinaryMask {
                width: w,
                height: h,
                data,
            },
            class_id,
            score,
        }
    }

    /// Pixel-at-a-time statement of the fusion rule.
    fn fuse_oracle(instances: &[InstanceMask], w: u32, h: u32) -> Vec<u8> {
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut winner: Option<&InstanceMask> = None;
                for inst in instances {
                    if inst.mask.is_set(x, y) && winner.map_or(true, |c| inst.score > c.score) {
                        winner = Some(inst);
                    }
                }
                out.push(winner.map_or(0, |i| i.class_id));
            }
        }
        out
    }

    #[test]
    fn threshold_filters_and_clamps() {
        let image = RgbImage::filled(20, 10, [0, 0, 0]).unwrap();
        let names = vec!["bus".to_string()];
        let d = FixedDetector(vec![det([2.0, 2.0, 8.0, 6.0], "bus", 0.9)]);
        assert_eq!(detect_objects(&image, &names, &voc(), &d, 0.35).unwrap().len(), 1);
        let d = FixedDetector(vec![det([2.0, 2.0, 8.0, 6.0], "bus", 0.2)]);
        assert!(detect_objects(&image, &names, &voc(), &d, 0.35).unwrap().is_empty());
        let d = FixedDetector(vec![det([15.0, -3.0, 30.0, 4.0], "buses", 0.9)]);
        let b = detect_objects(&image, &names, &voc(), &d, 0.35).unwrap()[0];
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max, b.class_id), (15, 0, 20, 4, 6));
    }

    #[test]
    fn labels_outside_query_are_rejected() {
        let image = RgbImage::filled(20, 10, [0, 0, 0]).unwrap();
        let d = FixedDetector(vec![det([2.0, 2.0, 8.0, 6.0], "cat", 0.9)]);
        assert_eq!(
            detect_objects(&image, &["bus".to_string()], &voc(), &d, 0.35),
            Err(MaskgenError::UnknownClass("cat".into()))
        );
        assert_eq!(
            detect_objects(&image, &["bus".to_string()], &voc(), &d, 1.5),
            Err(MaskgenError::InvalidThreshold(1.5))
        );
    }

    #[test]
    fn raising_threshold_never_adds_boxes() {
        let image = RgbImage::filled(20, 10, [0, 0, 0]).unwrap();
        let scores = [0.1, 0.3, 0.35, 0.5, 0.77, 0.9, 1.0];
        let d = FixedDetector(
            scores
                .iter()
                .map(|&s| det([1.0, 1.0, 5.0, 5.0], "bus", s))
                .collect(),
        );
        let names = vec!["bus".to_string()];
        let mut prev = usize::MAX;
        for t in [0.0, 0.2, 0.35, 0.6, 0.95, 1.0] {
            let n = detect_objects(&image, &names, &voc(), &d, t).unwrap().len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn segment_contract() {
        let image = RgbImage::filled(12, 12, [0, 0, 0]).unwrap();
        let mock = MockBackend::new(voc(), MockSettings::default());
        assert!(segment_boxes(&image, &[], &mock).unwrap().is_empty());
        let b = BBox {
            x_min: 2,
            y_min: 3,
            x_max: 6,
            y_max: 5,
            score: 0.8,
            class_id: 4,
        };
        let inst = segment_boxes(&image, &[b], &mock).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].mask.count(), 8);
        assert!(inst[0].mask.is_set(2, 3) && inst[0].mask.is_set(5, 4) && !inst[0].mask.is_set(6, 4));
        assert!(matches!(
            segment_boxes(&image, &[b], &WrongSize),
            Err(MaskgenError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn overlap_goes_to_higher_score() {
        let (w, h) = (8, 8);
        let instances = vec![rect(5, 0.6, (0, 0, 5, 5), w, h), rect(3, 0.9, (3, 3, 8, 8), w, h)];
        let merged = merge_instances(&instances, w, h);
        assert_eq!(merged.get(4, 4), 3);
        assert_eq!(merged.get(0, 0), 5);
        assert_eq!(merged.data(), fuse_oracle(&instances, w, h).as_slice());
        assert_eq!(merge_instances(&[], w, h), SemanticMask::background(w, h).unwrap());
    }

    #[test]
    fn disjoint_and_tied_instances() {
        let (w, h) = (10, 6);
        let a = rect(2, 0.5, (0, 0, 3, 3), w, h);
        let b = rect(7, 0.5, (6, 2, 9, 6), w, h);
        let m = merge_instances(&[a.clone(), b.clone()], w, h);
        assert_eq!(m.get(1, 1), 2);
        assert_eq!(m.get(7, 4), 7);
        assert_eq!(m.get(4, 0), 0);
        // Tie: earlier index wins.
        let c = rect(9, 0.5, (0, 0, 3, 3), w, h);
        assert_eq!(merge_instances(&[a.clone(), c.clone()], w, h).get(1, 1), 2);
        assert_eq!(merge_instances(&[c, a], w, h).get(1, 1), 9);
    }

    #[test]
    fn pseudo_mask_under_mocks() {
        let mut image = RgbImage::filled(16, 16, [0, 0, 0]).unwrap();
        for y in 2..9 {
            for x in 4..12 {
                image.set_pixel(x, y, voc().color(6));
            }
        }
        let backends = Backends::uniform(Arc::new(MockBackend::new(voc(), MockSettings::default())));
        let pm = generate_pseudo_mask(&image, &[6], &voc(), &backends, &MaskgenConfig::default()).unwrap();
        assert!(!pm.empty_detection);
        assert_eq!(pm.detections.len(), 1);
        let fg = pm.mask.data().iter().filter(|&&v| v == 6).count();
        assert_eq!(fg, 8 * 7);

        let blank = RgbImage::filled(16, 16, [0, 0, 0]).unwrap();
        let pm = generate_pseudo_mask(&blank, &[6], &voc(), &backends, &MaskgenConfig::default()).unwrap();
        assert!(pm.empty_detection);
        assert_eq!(pm.mask, SemanticMask::background(16, 16).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn fusion_matches_oracle(
            specs in proptest::collection::vec((1u8..=20, 0u32..4, 0u32..12, 0u32..12, 1u32..8, 1u32..8), 0..6)
        ) {
            let (w, h) = (12, 12);
            let scores = [0.2, 0.5, 0.5, 0.9];
            let instances: Vec<InstanceMask> = specs
                .iter()
                .map(|&(c, s, x, y, bw, bh)| rect(c, scores[s as usize], (x, y, (x + bw).min(w), (y + bh).min(h)), w, h))
                .collect();
            let merged = merge_instances(&instances, w, h);
            let expected = fuse_oracle(&instances, w, h);
            proptest::prop_assert_eq!(merged.data(), expected.as_slice());
            let union = (0..h).flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| instances.iter().any(|i| i.mask.is_set(x, y)))
                .count();
            let fg = merged.data().iter().filter(|&&v| v != 0).count();
            proptest::prop_assert!(fg <= union);
        }
    }
}
