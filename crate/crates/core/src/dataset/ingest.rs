use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use super::DatasetRecord;
use crate::maskio::{self, MaskIoError};
use crate::taxonomy::ClassTaxonomy;
use crate::types::{BACKGROUND, IGNORE_INDEX};

/// Optional per-image captions at the corpus root, one
/// `{"image_id": ..., "caption": ...}` object per line.
pub const CAPTIONS_FILE: &str = "captions.jsonl";

const IMAGE_DIR: &str = "JPEGImages";
const ANNOTATION_DIR: &str = "SegmentationClass";
const LIST_DIR: &str = "ImageSets/Segmentation";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("cannot decode {path}: {reason}")]
    DecodeFailure { path: PathBuf, reason: String },
    #[error("{path}: label {label} is not in the taxonomy")]
    InvalidLabel { path: PathBuf, label: u8 },
    #[error("{path}: annotation is {found:?}, image is {expected:?}")]
    SizeMismatch {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("record {0} is listed twice")]
    DuplicateRecord(String),
    #[error("{path}:{line}: {reason}")]
    BadCaption { path: PathBuf, line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn decode_err(path: &Path, e: MaskIoError) -> IngestError {
    match e {
        MaskIoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            IngestError::MissingFile(path.to_path_buf())
        }
        other => IngestError::DecodeFailure {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn find_image(root: &Path, id: &str) -> Option<PathBuf> {
    ["jpg", "jpeg", "png"]
        .iter()
        .map(|ext| root.join(IMAGE_DIR).join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

#[derive(Deserialize)]
struct CaptionLine {
    #[serde(alias = "id")]
    image_id: String,
    caption: String,
}

/// Reads a caption JSONL file into id -> captions (file order kept).
pub fn load_captions(path: &Path) -> Result<BTreeMap<String, Vec<String>>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CaptionLine = serde_json::from_str(line).map_err(|e| IngestError::BadCaption {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.entry(parsed.image_id).or_default().push(parsed.caption);
    }
    Ok(out)
}

/// Reads `root/ImageSets/Segmentation/<split>.txt` and every listed image.
///
/// Annotations under `SegmentationClass/` are optional; when present they
/// fix the record's class set. Captions come from `captions` if given,
/// otherwise from `root/captions.jsonl` when that exists. Records come back
/// sorted by id.
pub fn ingest_voc(
    root: &Path,
    split: &str,
    taxonomy: &ClassTaxonomy,
    captions: Option<&Path>,
) -> Result<Vec<DatasetRecord>, IngestError> {
    let list = root.join(LIST_DIR).join(format!("{split}.txt"));
    let text = std::fs::read_to_string(&list).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(list.clone())
        } else {
            IngestError::Io {
                path: list.clone(),
                source,
            }
        }
    })?;
    let mut ids = BTreeSet::new();
    for id in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if !ids.insert(id.to_string()) {
            return Err(IngestError::DuplicateRecord(id.to_string()));
        }
    }

    let default_captions = root.join(CAPTIONS_FILE);
    let caption_map = match captions {
        Some(p) => load_captions(p)?,
        None if default_captions.is_file() => load_captions(&default_captions)?,
        None => BTreeMap::new(),
    };

    ids.into_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|id| {
            let image_path =
                find_image(root, id).ok_or_else(|| IngestError::MissingFile(root.join(IMAGE_DIR).join(format!("{id}.jpg"))))?;
            let image = maskio::read_rgb(&image_path).map_err(|e| decode_err(&image_path, e))?;
            let mut record = DatasetRecord::new(id.clone(), image_path, image.width(), image.height());

            let ann_path = root.join(ANNOTATION_DIR).join(format!("{id}.png"));
            if ann_path.is_file() {
                let ann = maskio::read_mask(&ann_path).map_err(|e| decode_err(&ann_path, e))?;
                if (ann.width(), ann.height()) != (image.width(), image.height()) {
                    return Err(IngestError::SizeMismatch {
                        path: ann_path,
                        expected: (image.width(), image.height()),
                        found: (ann.width(), ann.height()),
                    });
                }
                let classes = ann.foreground_classes();
                if let Some(&bad) = classes.iter().find(|&&c| !taxonomy.contains_id(c)) {
                    return Err(IngestError::InvalidLabel { path: ann_path, label: bad });
                }
                debug_assert!(classes.iter().all(|&c| c != BACKGROUND && c != IGNORE_INDEX));
                record.class_ids = classes;
                record.annotation_path = Some(ann_path);
            }
            record.real_captions = caption_map.get(id.as_str()).cloned().unwrap_or_default();
            Ok(record)
        })
        .collect()
}
