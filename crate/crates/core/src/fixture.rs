//! Small synthetic VOC-layout corpora for tests and demos.
//!
//! Each image is a dark noisy background with one to three rectangles in
//! taxonomy palette colours; the annotation labels each rectangle with a
//! one-pixel ignore border, as VOC annotations do.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::maskio::{self, MaskIoError};
use crate::taxonomy::ClassTaxonomy;
use crate::types::{RgbImage, SemanticMask, IGNORE_INDEX};

const JPEG_QUALITY: u8 = 95;
const BACKGROUND_NOISE: u8 = 12;
const OBJECT_NOISE: i16 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub max_objects: usize,
    pub seed: u64,
    pub split: String,
    /// Also write `captions.jsonl` with one caption per image.
    pub captions: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            images: 10,
            width: 96,
            height: 72,
            max_objects: 3,
            seed: 7,
            split: "train".into(),
            captions: false,
        }
    }
}

/// One image and its annotation.
pub fn render_scene(rng: &mut ChaCha8Rng, spec: &CorpusSpec, taxonomy: &ClassTaxonomy) -> (RgbImage, SemanticMask) {
    let (w, h) = (spec.width, spec.height);
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for _ in 0..w * h {
        let g = rng.gen_range(0..=BACKGROUND_NOISE);
        data.extend_from_slice(&[g, g, g]);
    }
    let mut image = RgbImage::new(w, h, data).expect("extent is valid");
    let mut mask = SemanticMask::background(w, h).expect("extent is valid");

    let ids: Vec<u8> = taxonomy.ids().collect();
    let n = rng.gen_range(1..=spec.max_objects.max(1)).min(ids.len());
    let chosen: Vec<u8> = ids.choose_multiple(rng, n).copied().collect();
    for id in chosen {
        let rgb = taxonomy.color(id);
        let rw = rng.gen_range((w / 4).max(3)..=(w / 2).max(3));
        let rh = rng.gen_range((h / 4).max(3)..=(h / 2).max(3));
        let x0 = rng.gen_range(0..=w.saturating_sub(rw));
        let y0 = rng.gen_range(0..=h.saturating_sub(rh));
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                let px = rgb.map(|c| (c as i16 + rng.gen_range(-OBJECT_NOISE..=OBJECT_NOISE)).clamp(0, 255) as u8);
                image.set_pixel(x, y, px);
                let edge = x == x0 || y == y0 || x + 1 == x0 + rw || y + 1 == y0 + rh;
                mask.set(x, y, if edge { IGNORE_INDEX } else { id });
            }
        }
    }
    (image, mask)
}

/// Writes `spec.images` scenes in VOC layout under `root` and returns their ids.
pub fn write_corpus(root: &Path, spec: &CorpusSpec, taxonomy: &ClassTaxonomy) -> Result<Vec<String>, MaskIoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ids = Vec::with_capacity(spec.images);
    let mut captions = String::new();
    for i in 0..spec.images {
        let id = format!("fx_{i:04}");
        let (image, mask) = render_scene(&mut rng, spec, taxonomy);
        maskio::write_bytes(
            &root.join("JPEGImages").join(format!("{id}.jpg")),
            &maskio::encode_rgb_jpeg(&image, JPEG_QUALITY)?,
        )?;
        maskio::write_mask(&root.join("SegmentationClass").join(format!("{id}.png")), &mask, taxonomy)?;
        if spec.captions {
            let names: Vec<&str> = mask
                .foreground_classes()
                .iter()
                .filter_map(|&c| taxonomy.name(c).ok())
                .collect();
            let line = serde_json::json!({ "image_id": id, "caption": format!("a picture with a {}", names.join(" and a ")) });
            captions.push_str(&line.to_string());
            captions.push('\n');
        }
        ids.push(id);
    }
    let list: String = ids.iter().map(|id| format!("{id}\n")).collect();
    maskio::write_bytes(
        &root.join("ImageSets/Segmentation").join(format!("{}.txt", spec.split)),
        list.as_bytes(),
    )?;
    if spec.captions {
        maskio::write_bytes(&root.join(crate::dataset::CAPTIONS_FILE), captions.as_bytes())?;
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic() {
        let tax = ClassTaxonomy::pascal_voc();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = CorpusSpec { images: 3, captions: true, ..CorpusSpec::default() };
        let ids = write_corpus(a.path(), &spec, &tax).unwrap();
        write_corpus(b.path(), &spec, &tax).unwrap();
        assert_eq!(ids, vec!["fx_0000", "fx_0001", "fx_0002"]);
        for rel in ["JPEGImages/fx_0001.jpg", "SegmentationClass/fx_0002.png", "captions.jsonl"] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn scenes_have_labelled_objects() {
        let tax = ClassTaxonomy::pascal_voc();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (image, mask) = render_scene(&mut rng, &CorpusSpec::default(), &tax);
            assert!(!mask.foreground_classes().is_empty());
            assert_eq!((image.width(), image.height()), (mask.width(), mask.height()));
        }
    }
}
