//! Threshold and mixing-ratio grids over one set of generated variants.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, PipelineConfig};
use super::run::{run_until, sampling_inputs, select_record, worker_pool, PipelineError, Stage, StageContext};
use crate::backends::Backends;
use crate::dataset::{read_manifest, DatasetRecord, RecordStatus};
use crate::sample::plan_batches;
use crate::select::{Decision, SelectionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Epsilon,
    Tau,
    Alpha,
}

impl SweepParam {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "epsilon" | "eps" => Some(SweepParam::Epsilon),
            "tau" => Some(SweepParam::Tau),
            "alpha" => Some(SweepParam::Alpha),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub kept: usize,
    pub rejected_cosine: usize,
    pub rejected_match: usize,
    pub skipped: usize,
    pub records_with_kept: usize,
    /// Alpha sweeps only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_fraction: Option<f64>,
    /// Kept `(record_id, j)` pairs (threshold sweeps only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kept_variants: Vec<(String, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    /// For threshold sweeps: whether each stricter setting keeps a subset
    /// of what every looser one keeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nested: Option<bool>,
}

fn threshold_row(
    value: f64,
    records: &[DatasetRecord],
    ctx: &StageContext,
    selection: &SelectionConfig,
) -> Result<SweepRow, PipelineError> {
    let per_record: Vec<(String, Vec<crate::select::SelectionReport>)> = records
        .par_iter()
        .filter_map(|r| match select_record(r, ctx, selection) {
            Ok(reports) => Some((r.record_id.clone(), reports)),
            Err(reason) => {
                log::warn!("{}: skipped in sweep: {reason}", r.record_id);
                None
            }
        })
        .collect();
    let mut row = SweepRow {
        value,
        kept: 0,
        rejected_cosine: 0,
        rejected_match: 0,
        skipped: 0,
        records_with_kept: 0,
        synthetic_fraction: None,
        kept_variants: Vec::new(),
    };
    for (id, reports) in per_record {
        let mut any = false;
        for rep in reports {
            match rep.decision {
                Decision::Kept => {
                    row.kept += 1;
                    any = true;
                    row.kept_variants.push((id.clone(), rep.j));
                }
                Decision::RejectedCosine => row.rejected_cosine += 1,
                Decision::RejectedMatch => row.rejected_match += 1,
                Decision::Skipped => row.skipped += 1,
            }
        }
        row.records_with_kept += any as usize;
    }
    Ok(row)
}

/// Evaluates `values` of one parameter.
///
/// Threshold sweeps generate once (reusing any existing output) and rerun
/// selection per value without touching the manifest. Alpha sweeps run the
/// full selection with the configured thresholds and plan batches per value.
pub fn sweep(
    config: &PipelineConfig,
    backends: &Backends,
    param: SweepParam,
    values: &[f64],
) -> Result<SweepReport, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::Config(ConfigError::Invalid("sweep needs at least one value".into())));
    }
    if param == SweepParam::Alpha {
        let report = run_until(config, backends, Stage::Select)?;
        let records = read_manifest(&report.manifest)?;
        let (ids, index) = sampling_inputs(&records);
        let s = &config.sampling;
        let rows = values
            .iter()
            .map(|&alpha| {
                let plan = plan_batches(&ids, &index, alpha, s.batch_size, s.num_batches, s.seed)
                    .map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))?;
                Ok(SweepRow {
                    value: alpha,
                    kept: report.kept_variants,
                    rejected_cosine: 0,
                    rejected_match: 0,
                    skipped: 0,
                    records_with_kept: index.len(),
                    synthetic_fraction: Some(plan.synthetic_fraction()),
                    kept_variants: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        return Ok(SweepReport { param, rows, nested: None });
    }

    let report = run_until(config, backends, Stage::Generate)?;
    let records: Vec<DatasetRecord> = read_manifest(&report.manifest)?
        .into_iter()
        .filter(|r| matches!(r.status, RecordStatus::Generated | RecordStatus::Selected))
        .collect();
    let taxonomy = config.load_taxonomy()?;
    let ctx = StageContext {
        config,
        taxonomy: &taxonomy,
        backends,
        output_dir: report.manifest.parent().expect("manifest has a directory").to_path_buf(),
    };
    let pool = worker_pool(config.jobs)?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut selection = config.selection.clone();
        match param {
            SweepParam::Epsilon => selection.epsilon = value,
            SweepParam::Tau => selection.tau = value,
            SweepParam::Alpha => unreachable!(),
        }
        selection
            .validate()
            .map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))?;
        rows.push(pool.install(|| threshold_row(value, &records, &ctx, &selection))?);
    }

    // Larger thresholds are stricter for both parameters.
    let mut order: Vec<&SweepRow> = rows.iter().collect();
    order.sort_by(|a, b| a.value.total_cmp(&b.value));
    let nested = order.windows(2).all(|w| {
        let looser: BTreeSet<&(String, u32)> = w[0].kept_variants.iter().collect();
        w[1].kept_variants.iter().all(|k| looser.contains(k))
    });
    Ok(SweepReport {
        param,
        rows,
        nested: Some(nested),
    })
}
