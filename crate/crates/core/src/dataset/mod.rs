//! Corpus records, VOC ingestion, the JSONL manifest and dataset assembly.

mod assemble;
mod ingest;
mod manifest;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::prompts::PromptSource;
use crate::sample::ClassSet;
use crate::select::{Decision, SelectionReport};

pub use assemble::{assemble_dataset, assemble_records, variant_name, AssembleError, AssemblySummary, Include};
pub use ingest::{ingest_voc, load_captions, IngestError, CAPTIONS_FILE};
pub use manifest::{
    read_manifest, write_manifest, ManifestAppender, ManifestError, MANIFEST_SCHEMA, MANIFEST_VERSION,
};

/// Furthest stage a record has completed, or why it left the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ingested,
    Prompted,
    Masked,
    Generated,
    Selected,
    /// Detector found nothing; the record stays real-only.
    Excluded,
    Quarantined,
}

impl RecordStatus {
    /// Terminal states are never advanced by a resumed run.
    pub fn is_terminal(self) -> bool {
        matches!(self, RecordStatus::Selected | RecordStatus::Excluded | RecordStatus::Quarantined)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub j: u32,
    pub seed: u64,
    /// Missing when generation of this variant failed.
    #[serde(default)]
    pub image_path: Option<PathBuf>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub selection: Option<SelectionReport>,
}

impl VariantEntry {
    pub fn is_kept(&self) -> bool {
        self.selection.as_ref().is_some_and(|s| s.decision == Decision::Kept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub record_id: String,
    pub source_image_path: PathBuf,
    #[serde(default)]
    pub annotation_path: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    /// Sorted, without background or ignore.
    pub class_ids: Vec<u8>,
    /// Human captions shipped with the corpus, if any.
    #[serde(default)]
    pub real_captions: Vec<String>,
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub composed_prompt: Option<String>,
    #[serde(default)]
    pub prompt_source: Option<PromptSource>,
    #[serde(default)]
    pub pseudo_mask_path: Option<PathBuf>,
    #[serde(default)]
    pub variants: Vec<VariantEntry>,
    pub status: RecordStatus,
    #[serde(default)]
    pub reason: Option<String>,
}

impl DatasetRecord {
    pub fn new(record_id: impl Into<String>, source_image_path: PathBuf, width: u32, height: u32) -> Self {
        Self {
            record_id: record_id.into(),
            source_image_path,
            annotation_path: None,
            width,
            height,
            class_ids: Vec::new(),
            real_captions: Vec::new(),
            caption: None,
            composed_prompt: None,
            prompt_source: None,
            pseudo_mask_path: None,
            variants: Vec::new(),
            status: RecordStatus::Ingested,
            reason: None,
        }
    }

    pub fn kept_variants(&self) -> Vec<u32> {
        self.variants.iter().filter(|v| v.is_kept()).map(|v| v.j).collect()
    }

    pub fn quarantine(&mut self, reason: impl Into<String>) {
        self.status = RecordStatus::Quarantined;
        self.reason = Some(reason.into());
    }

    /// Applies `f` to every stored path.
    pub(crate) fn map_paths(&mut self, mut f: impl FnMut(&PathBuf) -> PathBuf) {
        self.source_image_path = f(&self.source_image_path);
        for p in [&mut self.annotation_path, &mut self.pseudo_mask_path] {
            if let Some(path) = p.as_mut() {
                *path = f(path);
            }
        }
        for v in &mut self.variants {
            if let Some(path) = v.image_path.as_mut() {
                *path = f(path);
            }
        }
    }
}

impl ClassSet for DatasetRecord {
    fn class_ids(&self) -> &[u8] {
        &self.class_ids
    }
}
