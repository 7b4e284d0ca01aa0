use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, PipelineConfig};
use crate::backends::Backends;
use crate::dataset::{
    assemble_records, ingest_voc, read_manifest, write_manifest, AssembleError, AssemblySummary, DatasetRecord,
    IngestError, ManifestAppender, ManifestError, RecordStatus, VariantEntry,
};
use crate::generate::synthesize_variants;
use crate::maskgen::{generate_pseudo_mask, MaskSource};
use crate::maskio;
use crate::prompts::{caption_image, compose_prompt, use_real_caption, PromptBundle, PromptError, PromptSource};
use crate::sample::plan_batches;
use crate::select::{select, SelectionConfig, SelectionReport};
use crate::taxonomy::ClassTaxonomy;
use crate::types::RgbImage;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PLAN_FILE: &str = "plan.jsonl";
pub const DATASET_DIR: &str = "dataset";
const PSEUDO_MASK_DIR: &str = "pseudo_masks";
const VARIANT_DIR: &str = "variants";

/// Pipeline stages in execution order; running "until" a stage completes
/// it and everything before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Caption,
    Maskgen,
    Generate,
    Select,
    Assemble,
}

impl Stage {
    /// Record status reached once this stage has run.
    pub fn status(self) -> RecordStatus {
        match self {
            Stage::Ingest => RecordStatus::Ingested,
            Stage::Caption => RecordStatus::Prompted,
            Stage::Maskgen => RecordStatus::Masked,
            Stage::Generate => RecordStatus::Generated,
            Stage::Select | Stage::Assemble => RecordStatus::Selected,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error("{quarantined} of {total} records quarantined, over the failure budget of {budget}")]
    FailureBudget { quarantined: usize, total: usize, budget: f64 },
    #[error("io failure on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub manifest: PathBuf,
    pub stage: Stage,
    pub records: usize,
    pub by_status: BTreeMap<RecordStatus, usize>,
    /// Record id -> reason.
    pub quarantined: BTreeMap<String, String>,
    pub kept_variants: usize,
    #[serde(default)]
    pub dataset: Option<AssemblySummary>,
    #[serde(default)]
    pub plan: Option<PathBuf>,
}

/// Everything a stage needs besides the record itself.
pub struct StageContext<'a> {
    pub config: &'a PipelineConfig,
    pub taxonomy: &'a ClassTaxonomy,
    pub backends: &'a Backends,
    pub output_dir: PathBuf,
}

impl StageContext<'_> {
    fn pseudo_mask_path(&self, id: &str) -> PathBuf {
        self.output_dir.join(PSEUDO_MASK_DIR).join(format!("{id}.png"))
    }

    fn variant_path(&self, id: &str, j: u32) -> PathBuf {
        self.output_dir.join(VARIANT_DIR).join(id).join(format!("{j}.png"))
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn load_source(record: &DatasetRecord) -> Result<RgbImage, String> {
    maskio::read_rgb(&record.source_image_path).map_err(err)
}

fn compose(record: &DatasetRecord, caption: &str, source: PromptSource, taxonomy: &ClassTaxonomy) -> Result<PromptBundle, PromptError> {
    match source {
        PromptSource::RealCaption => use_real_caption(caption, &record.class_ids, taxonomy),
        _ => compose_prompt(caption, &record.class_ids, taxonomy),
    }
}

fn stage_prompt(record: &mut DatasetRecord, ctx: &StageContext) -> Result<(), String> {
    let real = record
        .real_captions
        .first()
        .filter(|c| ctx.config.use_real_captions && !c.trim().is_empty())
        .cloned();
    let bundle = match real {
        Some(caption) => use_real_caption(&caption, &record.class_ids, ctx.taxonomy),
        None => {
            let image = load_source(record)?;
            match caption_image(&image, ctx.backends.caption.as_ref()) {
                Ok(caption) => compose_prompt(&caption, &record.class_ids, ctx.taxonomy),
                Err(PromptError::EmptyCaption) => {
                    warn!("{}: blank caption, using the class template", record.record_id);
                    compose_prompt("", &record.class_ids, ctx.taxonomy)
                }
                Err(e) => Err(e),
            }
        }
    };
    // Without annotations the classes are only known after mask generation,
    // which recomposes the prompt.
    let bundle = match bundle {
        Err(PromptError::EmptyPrompt) if record.class_ids.is_empty() => PromptBundle {
            caption: String::new(),
            class_ids: Vec::new(),
            composed: String::new(),
            source: PromptSource::ClassTemplate,
        },
        other => other.map_err(err)?,
    };
    record.caption = Some(bundle.caption);
    record.composed_prompt = Some(bundle.composed);
    record.prompt_source = Some(bundle.source);
    record.status = RecordStatus::Prompted;
    Ok(())
}

fn stage_mask(record: &mut DatasetRecord, ctx: &StageContext) -> Result<(), String> {
    let annotation = record
        .annotation_path
        .as_ref()
        .filter(|_| ctx.config.maskgen.mask_source == MaskSource::GroundTruth);
    let mask = match annotation {
        Some(path) => maskio::read_mask(path).map_err(err)?,
        None => {
            let image = load_source(record)?;
            let pseudo = generate_pseudo_mask(&image, &record.class_ids, ctx.taxonomy, ctx.backends, &ctx.config.maskgen)
                .map_err(err)?;
            if pseudo.empty_detection {
                info!("{}: no detections, kept as real-only", record.record_id);
                record.status = RecordStatus::Excluded;
                record.reason = Some("empty detection".into());
                return Ok(());
            }
            pseudo.mask
        }
    };
    if record.class_ids.is_empty() {
        record.class_ids = mask.foreground_classes();
        let caption = record.caption.clone().unwrap_or_default();
        let source = record.prompt_source.unwrap_or(PromptSource::Captioned);
        let bundle = compose(record, &caption, source, ctx.taxonomy).map_err(err)?;
        record.composed_prompt = Some(bundle.composed);
        record.prompt_source = Some(bundle.source);
    }
    let path = ctx.pseudo_mask_path(&record.record_id);
    maskio::write_mask(&path, &mask, ctx.taxonomy).map_err(err)?;
    record.pseudo_mask_path = Some(path);
    record.status = RecordStatus::Masked;
    Ok(())
}

fn stage_generate(record: &mut DatasetRecord, ctx: &StageContext) -> Result<(), String> {
    let params = &ctx.config.generation;
    let mask_path = record.pseudo_mask_path.as_ref().ok_or("record has no mask")?;
    let mask = maskio::read_mask(mask_path)
        .map_err(err)?
        .resize_nearest(params.width, params.height)
        .map_err(err)?;
    let bundle = PromptBundle {
        caption: record.caption.clone().unwrap_or_default(),
        class_ids: record.class_ids.clone(),
        composed: record.composed_prompt.clone().ok_or("record has no prompt")?,
        source: record.prompt_source.unwrap_or(PromptSource::Captioned),
    };
    let batch = synthesize_variants(
        &record.record_id,
        &bundle,
        &mask,
        ctx.taxonomy,
        params,
        ctx.backends.generate.as_ref(),
    )
    .map_err(err)?;
    let mut entries = Vec::with_capacity(params.k_per_image as usize);
    for v in batch.variants {
        let path = ctx.variant_path(&record.record_id, v.variant_index);
        maskio::write_rgb_png(&path, &v.image).map_err(err)?;
        entries.push(VariantEntry {
            j: v.variant_index,
            seed: v.seed,
            image_path: Some(path),
            error: None,
            selection: None,
        });
    }
    for f in batch.failures {
        entries.push(VariantEntry {
            j: f.j,
            seed: f.seed,
            image_path: None,
            error: Some(f.error),
            selection: None,
        });
    }
    entries.sort_by_key(|e| e.j);
    record.variants = entries;
    record.status = RecordStatus::Generated;
    Ok(())
}

/// Runs selection over a generated record without modifying it.
pub fn select_record(
    record: &DatasetRecord,
    ctx: &StageContext,
    selection: &SelectionConfig,
) -> Result<Vec<SelectionReport>, String> {
    let real = load_source(record)?;
    let mask_path = record.pseudo_mask_path.as_ref().ok_or("record has no mask")?;
    let mask = maskio::read_mask(mask_path).map_err(err)?;
    let variants = record
        .variants
        .iter()
        .filter_map(|v| v.image_path.as_ref().map(|p| (v.j, p)))
        .map(|(j, p)| maskio::read_rgb(p).map(|img| (j, img)).map_err(err))
        .collect::<Result<Vec<_>, _>>()?;
    select(
        &real,
        &mask,
        &record.class_ids,
        &variants,
        ctx.taxonomy,
        ctx.backends,
        &ctx.config.maskgen,
        selection,
    )
    .map_err(err)
}

fn stage_select(record: &mut DatasetRecord, ctx: &StageContext) -> Result<(), String> {
    let reports = select_record(record, ctx, &ctx.config.selection)?;
    let mut by_j: BTreeMap<u32, SelectionReport> = reports.into_iter().map(|r| (r.j, r)).collect();
    for v in &mut record.variants {
        v.selection = by_j.remove(&v.j);
    }
    record.status = RecordStatus::Selected;
    Ok(())
}

fn advance(
    record: &mut DatasetRecord,
    ctx: &StageContext,
    target: RecordStatus,
    appender: &ManifestAppender,
    abort: &AtomicBool,
) -> Result<(), ManifestError> {
    while !record.status.is_terminal() && record.status < target {
        if abort.load(Ordering::SeqCst) {
            return Ok(());
        }
        let step = match record.status {
            RecordStatus::Ingested => stage_prompt,
            RecordStatus::Prompted => stage_mask,
            RecordStatus::Masked => stage_generate,
            _ => stage_select,
        };
        if let Err(reason) = step(record, ctx) {
            warn!("{}: quarantined at {:?}: {reason}", record.record_id, record.status);
            record.quarantine(reason);
        }
        appender.append(record)?;
    }
    Ok(())
}

fn absolute(path: &Path) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    path.canonicalize().map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Existing manifest records take precedence over a fresh ingest.
fn load_records(config: &PipelineConfig, taxonomy: &ClassTaxonomy, manifest: &Path) -> Result<Vec<DatasetRecord>, PipelineError> {
    let corpus_root = config.corpus.root.canonicalize().map_err(|e| PipelineError::Io {
        path: config.corpus.root.clone(),
        reason: e.to_string(),
    })?;
    let ingested = ingest_voc(&corpus_root, &config.corpus.split, taxonomy, config.corpus.captions.as_deref())?;
    let mut previous: BTreeMap<String, DatasetRecord> = if manifest.is_file() {
        read_manifest(manifest)?.into_iter().map(|r| (r.record_id.clone(), r)).collect()
    } else {
        BTreeMap::new()
    };
    let resumed = previous.len();
    let records: Vec<DatasetRecord> = ingested
        .into_iter()
        .map(|r| previous.remove(&r.record_id).unwrap_or(r))
        .collect();
    if resumed > 0 {
        info!("resuming: {} records already in the manifest", resumed - previous.len());
    }
    for id in previous.keys() {
        warn!("{id} is in the manifest but no longer in the corpus; dropping it");
    }
    Ok(records)
}

pub(crate) fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))
}

/// Runs every stage up to and including `until`, resuming from the
/// manifest in the output directory when one exists.
pub fn run_until(config: &PipelineConfig, backends: &Backends, until: Stage) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let taxonomy = config.load_taxonomy()?;
    let output_dir = absolute(&config.output_dir)?;
    let manifest = output_dir.join(MANIFEST_FILE);
    let mut records = load_records(config, &taxonomy, &manifest)?;
    let total = records.len();

    let ctx = StageContext {
        config,
        taxonomy: &taxonomy,
        backends,
        output_dir: output_dir.clone(),
    };
    let target = until.status();
    let quarantined = AtomicUsize::new(
        records.iter().filter(|r| r.status == RecordStatus::Quarantined).count(),
    );
    let over_budget = |q: usize| q as f64 > config.failure_budget * total as f64;
    let abort = AtomicBool::new(over_budget(quarantined.load(Ordering::SeqCst)));

    {
        let appender = ManifestAppender::open(&manifest)?;
        worker_pool(config.jobs)?.install(|| {
            records.par_iter_mut().try_for_each(|record| {
                let before = record.status;
                advance(record, &ctx, target, &appender, &abort)?;
                if before != RecordStatus::Quarantined && record.status == RecordStatus::Quarantined {
                    let q = quarantined.fetch_add(1, Ordering::SeqCst) + 1;
                    if over_budget(q) {
                        abort.store(true, Ordering::SeqCst);
                    }
                }
                Ok::<_, ManifestError>(())
            })
        })?;
    }
    write_manifest(&records, &manifest)?;

    let q = quarantined.load(Ordering::SeqCst);
    if over_budget(q) {
        return Err(PipelineError::FailureBudget {
            quarantined: q,
            total,
            budget: config.failure_budget,
        });
    }

    let mut report = RunReport {
        manifest: manifest.clone(),
        stage: until,
        records: total,
        by_status: BTreeMap::new(),
        quarantined: BTreeMap::new(),
        kept_variants: records.iter().map(|r| r.kept_variants().len()).sum(),
        dataset: None,
        plan: None,
    };
    for r in &records {
        *report.by_status.entry(r.status).or_insert(0) += 1;
        if r.status == RecordStatus::Quarantined {
            report.quarantined.insert(r.record_id.clone(), r.reason.clone().unwrap_or_default());
        }
    }

    if until == Stage::Assemble {
        let summary = assemble_records(&records, &output_dir.join(DATASET_DIR), config.include, &taxonomy)?;
        report.dataset = Some(summary);
        report.plan = write_plan(config, &records, &output_dir.join(PLAN_FILE))?;
    }
    Ok(report)
}

/// Full pipeline: all stages plus assembly and the batch plan.
pub fn run(config: &PipelineConfig, backends: &Backends) -> Result<RunReport, PipelineError> {
    run_until(config, backends, Stage::Assemble)
}

/// Real ids are every record that was not quarantined; the synthetic index
/// holds each record's kept variants.
pub fn sampling_inputs(records: &[DatasetRecord]) -> (Vec<String>, BTreeMap<String, Vec<u32>>) {
    let usable: Vec<&DatasetRecord> = records.iter().filter(|r| r.status != RecordStatus::Quarantined).collect();
    let ids = usable.iter().map(|r| r.record_id.clone()).collect();
    let index = usable
        .iter()
        .map(|r| (r.record_id.clone(), r.kept_variants()))
        .filter(|(_, kept)| !kept.is_empty())
        .collect();
    (ids, index)
}

fn write_plan(config: &PipelineConfig, records: &[DatasetRecord], path: &Path) -> Result<Option<PathBuf>, PipelineError> {
    let (ids, index) = sampling_inputs(records);
    if ids.is_empty() {
        return Ok(None);
    }
    let s = &config.sampling;
    let plan = plan_batches(&ids, &index, s.alpha, s.batch_size, s.num_batches, s.seed)
        .map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))?;
    std::fs::write(path, plan.to_jsonl()).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(Some(path.to_path_buf()))
}
