use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{read_manifest, DatasetRecord, ManifestError, RecordStatus, VariantEntry};
use crate::maskio::{self, MaskIoError};
use crate::select::Decision;
use crate::taxonomy::ClassTaxonomy;

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("io failure on {path}: {reason}")]
    IoFailure { path: PathBuf, reason: String },
    #[error("inconsistent manifest: {0}")]
    InconsistentManifest(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

impl AssembleError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        AssembleError::IoFailure {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }
}

impl From<MaskIoError> for AssembleError {
    fn from(e: MaskIoError) -> Self {
        match e {
            MaskIoError::Io { path, source } => AssembleError::IoFailure {
                path: path.into(),
                reason: source.to_string(),
            },
            other => AssembleError::IoFailure {
                path: PathBuf::new(),
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Include {
    KeptOnly,
    /// Every generated variant, whatever the selection said.
    All,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblySummary {
    pub records: usize,
    pub emitted: usize,
    pub kept: usize,
    pub rejected_cosine: usize,
    pub rejected_match: usize,
    pub skipped: usize,
    pub failed_generation: usize,
    pub excluded_records: usize,
    pub quarantined_records: usize,
    /// Label value -> pixel count over every emitted mask.
    pub class_pixel_counts: BTreeMap<u8, u64>,
}

impl AssemblySummary {
    pub fn rejected(&self) -> usize {
        self.rejected_cosine + self.rejected_match
    }
}

#[derive(Serialize)]
struct PromptLine<'a> {
    name: &'a str,
    record_id: &'a str,
    j: u32,
    seed: u64,
    prompt: &'a str,
}

struct Emitted {
    name: String,
    line: String,
    counts: BTreeMap<u8, u64>,
}

pub fn variant_name(record_id: &str, j: u32) -> String {
    format!("{record_id}_{j}")
}

fn emit_variant(
    record: &DatasetRecord,
    variant: &VariantEntry,
    out_dir: &Path,
    taxonomy: &ClassTaxonomy,
) -> Result<Emitted, AssembleError> {
    let missing = |what: &str| {
        AssembleError::InconsistentManifest(format!("record {} variant {}: {what}", record.record_id, variant.j))
    };
    let image_path = variant.image_path.as_ref().ok_or_else(|| missing("no image on record"))?;
    let mask_path = record.pseudo_mask_path.as_ref().ok_or_else(|| missing("no pseudo-mask on record"))?;
    if !image_path.is_file() {
        return Err(missing("image file is missing"));
    }
    if !mask_path.is_file() {
        return Err(missing("pseudo-mask file is missing"));
    }
    let image = maskio::read_rgb(image_path)?;
    let mask = maskio::read_mask(mask_path)?
        .resize_nearest(image.width(), image.height())
        .map_err(|e| missing(&e.to_string()))?;

    let name = variant_name(&record.record_id, variant.j);
    maskio::write_rgb_png(&out_dir.join("images").join(format!("{name}.png")), &image)?;
    maskio::write_mask(&out_dir.join("masks").join(format!("{name}.png")), &mask, taxonomy)?;

    let mut counts = BTreeMap::new();
    for &v in mask.data() {
        *counts.entry(v).or_insert(0) += 1;
    }
    let line = serde_json::to_string(&PromptLine {
        name: &name,
        record_id: &record.record_id,
        j: variant.j,
        seed: variant.seed,
        prompt: record.composed_prompt.as_deref().unwrap_or(""),
    })
    .expect("prompt line serializes");
    Ok(Emitted { name, line, counts })
}

/// Writes the synthetic image/mask pairs of `records` under `out_dir`:
/// `images/`, `masks/` (palette PNG), `prompts.jsonl`, `index.txt` and
/// `summary.json`. Previous contents of those entries are replaced, so
/// rerunning over the same records reproduces the same bytes.
pub fn assemble_records(
    records: &[DatasetRecord],
    out_dir: &Path,
    include: Include,
    taxonomy: &ClassTaxonomy,
) -> Result<AssemblySummary, AssembleError> {
    let mut summary = AssemblySummary {
        records: records.len(),
        ..AssemblySummary::default()
    };
    let mut chosen: Vec<(&DatasetRecord, &VariantEntry)> = Vec::new();
    let mut sorted: Vec<&DatasetRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    for record in sorted {
        match record.status {
            RecordStatus::Excluded => summary.excluded_records += 1,
            RecordStatus::Quarantined => summary.quarantined_records += 1,
            _ => {}
        }
        let mut variants: Vec<&VariantEntry> = record.variants.iter().collect();
        variants.sort_by_key(|v| v.j);
        for v in variants {
            if v.image_path.is_none() {
                summary.failed_generation += 1;
                continue;
            }
            match v.selection.as_ref().map(|s| s.decision) {
                Some(Decision::Kept) => summary.kept += 1,
                Some(Decision::RejectedCosine) => summary.rejected_cosine += 1,
                Some(Decision::RejectedMatch) => summary.rejected_match += 1,
                Some(Decision::Skipped) => summary.skipped += 1,
                None => {}
            }
            if v.is_kept() || include == Include::All {
                chosen.push((record, v));
            }
        }
    }

    for sub in ["images", "masks"] {
        let dir = out_dir.join(sub);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| AssembleError::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| AssembleError::io(&dir, e))?;
    }

    let emitted: Vec<Emitted> = chosen
        .par_iter()
        .map(|(r, v)| emit_variant(r, v, out_dir, taxonomy))
        .collect::<Result<_, _>>()?;

    let mut prompts = String::new();
    let mut index = String::new();
    for e in &emitted {
        prompts.push_str(&e.line);
        prompts.push('\n');
        index.push_str(&e.name);
        index.push('\n');
        for (&label, &n) in &e.counts {
            *summary.class_pixel_counts.entry(label).or_insert(0) += n;
        }
    }
    summary.emitted = emitted.len();

    let write = |name: &str, text: &str| {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| AssembleError::io(&path, e))
    };
    write("prompts.jsonl", &prompts)?;
    write("index.txt", &index)?;
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write("summary.json", &json)?;
    Ok(summary)
}

/// [`assemble_records`] over the records of a manifest file.
pub fn assemble_dataset(
    manifest: &Path,
    out_dir: &Path,
    include: Include,
    taxonomy: &ClassTaxonomy,
) -> Result<AssemblySummary, AssembleError> {
    let records = read_manifest(manifest)?;
    assemble_records(&records, out_dir, include, taxonomy)
}
