//! Prompt construction: a caption with the image's class names appended.
//!
//! `"A living room with a couch and a coffee table"` with classes
//! `[pottedplant, sofa, chair]` becomes
//! `"A living room with a couch and a coffee table; pottedplant, sofa, chair"`.
//! Names keep the order of the supplied ids with duplicates dropped; the
//! pipeline always supplies ids in ascending order. Without a caption the
//! prompt falls back to `"An image of <names>"`.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, CaptionBackend};
use crate::taxonomy::ClassTaxonomy;
use crate::types::RgbImage;

pub const CAPTION_SEPARATOR: &str = "; ";
pub const CLASS_SEPARATOR: &str = ", ";
pub const TEMPLATE_PREFIX: &str = "An image of ";
/// Composed prompts longer than this are logged; truncation is left to the text encoder.
pub const LONG_PROMPT_CHARS: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("class id {0} is not in the taxonomy")]
    UnknownClass(u8),
    #[error("captioner returned an empty caption")]
    EmptyCaption,
    #[error("nothing to compose: empty caption and no classes")]
    EmptyPrompt,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    Captioned,
    RealCaption,
    ClassTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub caption: String,
    pub class_ids: Vec<u8>,
    pub composed: String,
    pub source: PromptSource,
}

pub fn caption_image(image: &RgbImage, captioner: &dyn CaptionBackend) -> Result<String, PromptError> {
    let caption = captioner.caption(image)?;
    let caption = caption.trim();
    if caption.is_empty() {
        return Err(PromptError::EmptyCaption);
    }
    Ok(caption.to_string())
}

fn compose_with_source(
    caption: &str,
    class_ids: &[u8],
    taxonomy: &ClassTaxonomy,
    caption_source: PromptSource,
) -> Result<PromptBundle, PromptError> {
    let mut ids: Vec<u8> = Vec::with_capacity(class_ids.len());
    for &id in class_ids {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let names = ids
        .iter()
        .map(|&id| taxonomy.name(id).map_err(|_| PromptError::UnknownClass(id)))
        .collect::<Result<Vec<_>, _>>()?;
    let suffix = names.join(CLASS_SEPARATOR);
    let caption = caption.trim();

    let (composed, source) = if caption.is_empty() {
        if suffix.is_empty() {
            return Err(PromptError::EmptyPrompt);
        }
        (format!("{TEMPLATE_PREFIX}{suffix}"), PromptSource::ClassTemplate)
    } else if suffix.is_empty() {
        (caption.to_string(), caption_source)
    } else {
        (format!("{caption}{CAPTION_SEPARATOR}{suffix}"), caption_source)
    };

    if composed.chars().count() > LONG_PROMPT_CHARS {
        warn!(
            "composed prompt is {} characters (over {LONG_PROMPT_CHARS}); the text encoder may truncate it",
            composed.chars().count()
        );
    }
    Ok(PromptBundle {
        caption: caption.to_string(),
        class_ids: ids,
        composed,
        source,
    })
}

/// Appends class names to a generated caption.
pub fn compose_prompt(
    caption: &str,
    class_ids: &[u8],
    taxonomy: &ClassTaxonomy,
) -> Result<PromptBundle, PromptError> {
    compose_with_source(caption, class_ids, taxonomy, PromptSource::Captioned)
}

/// Same composition for a human-written caption (e.g. from COCO).
pub fn use_real_caption(
    caption: &str,
    class_ids: &[u8],
    taxonomy: &ClassTaxonomy,
) -> Result<PromptBundle, PromptError> {
    compose_with_source(caption, class_ids, taxonomy, PromptSource::RealCaption)
}
