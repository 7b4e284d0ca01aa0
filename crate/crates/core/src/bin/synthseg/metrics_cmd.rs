use std::path::{Path, PathBuf};

use clap::Subcommand;
use serde_json::json;

use synthseg::dataset::read_manifest;
use synthseg::maskio;
use synthseg::metrics::{feature_stats, fid, inception_score, ConfusionCounts};
use synthseg::taxonomy::ClassTaxonomy;
use synthseg::IGNORE_INDEX;

use crate::{to_value, CliError};

#[derive(Subcommand)]
pub enum MetricsCommand {
    /// Frechet distance between two feature files.
    Fid {
        /// JSON array of vectors, or JSONL with one vector per line.
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Inception score of a class-probability file.
    Is {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long, default_value_t = 10)]
        splits: usize,
    },
    /// mIoU of predicted masks against references.
    Miou {
        /// Directory of predicted masks, paired with --gt by file name.
        #[arg(long, requires = "gt", conflicts_with = "manifest")]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Score the manifest's pseudo-masks against corpus annotations.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Defaults to the taxonomy size plus background.
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
}

fn read_vectors(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let trimmed = text.trim_start();
    let parsed = if trimmed.starts_with("[[") || trimmed == "[]" {
        serde_json::from_str(trimmed)
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    };
    parsed.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn miou_pairs(pairs: Vec<(PathBuf, PathBuf)>, num_classes: usize) -> Result<serde_json::Value, CliError> {
    let mut counts = ConfusionCounts::new(num_classes, IGNORE_INDEX);
    for (pred, gt) in &pairs {
        let p = maskio::read_mask(pred).map_err(CliError::runtime)?;
        let g = maskio::read_mask(gt).map_err(CliError::runtime)?;
        let p = if p.same_extent(&g) {
            p
        } else {
            p.resize_nearest(g.width(), g.height()).map_err(CliError::runtime)?
        };
        counts.add(&p, &g).map_err(|e| CliError::runtime(format!("{}: {e}", pred.display())))?;
    }
    let result = counts.result().map_err(CliError::runtime)?;
    Ok(json!({
        "pairs": pairs.len(),
        "miou": result.mean,
        "pixel_accuracy": counts.pixel_accuracy().map_err(CliError::runtime)?,
        "per_class_iou": result.per_class_iou,
    }))
}

pub fn execute(command: MetricsCommand) -> Result<serde_json::Value, CliError> {
    match command {
        MetricsCommand::Fid { a, b } => {
            let (va, vb) = (read_vectors(&a)?, read_vectors(&b)?);
            let sa = feature_stats(&va).map_err(CliError::usage)?;
            let sb = feature_stats(&vb).map_err(CliError::usage)?;
            let value = fid(&sa, &sb).map_err(CliError::runtime)?;
            Ok(json!({ "fid": value, "n_a": va.len(), "n_b": vb.len(), "dim": sa.dim() }))
        }
        MetricsCommand::Is { probs, splits } => {
            let rows = read_vectors(&probs)?;
            let score = inception_score(&rows, splits).map_err(CliError::usage)?;
            Ok(to_value(&score))
        }
        MetricsCommand::Miou {
            pred,
            gt,
            manifest,
            num_classes,
            taxonomy,
        } => {
            let tax = match taxonomy {
                Some(p) => ClassTaxonomy::load(&p).map_err(CliError::usage)?,
                None => ClassTaxonomy::pascal_voc(),
            };
            let num_classes = num_classes.unwrap_or(tax.max_id() as usize + 1);
            let pairs = match (pred, gt, manifest) {
                (Some(pred), Some(gt), None) => {
                    let mut entries: Vec<PathBuf> = std::fs::read_dir(&pred)
                        .map_err(|e| CliError::usage(format!("{}: {e}", pred.display())))?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|x| x == "png"))
                        .collect();
                    entries.sort();
                    entries
                        .into_iter()
                        .map(|p| {
                            let g = gt.join(p.file_name().expect("listed files have names"));
                            if g.is_file() {
                                Ok((p, g))
                            } else {
                                Err(CliError::runtime(format!("no reference mask {}", g.display())))
                            }
                        })
                        .collect::<Result<Vec<_>, _>>()?
                }
                (None, None, Some(m)) => read_manifest(&m)
                    .map_err(CliError::runtime)?
                    .into_iter()
                    .filter_map(|r| Some((r.pseudo_mask_path?, r.annotation_path?)))
                    .collect(),
                _ => return Err(CliError::usage("miou needs --pred with --gt, or --manifest")),
            };
            miou_pairs(pairs, num_classes)
        }
    }
}
