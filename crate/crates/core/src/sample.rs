//! Real/synthetic batch planning and few-shot class folds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("no real records to sample from")]
    EmptyDataset,
    #[error("batch size must be positive")]
    InvalidBatchSize,
    #[error("{classes} classes cannot be split into {folds} equal folds")]
    NotDivisible { classes: usize, folds: usize },
    #[error("fold {fold} out of range ({num_folds} folds)")]
    UnknownFold { fold: usize, num_folds: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Slot {
    Real { i: String },
    Synthetic { i: String, j: u32 },
}

impl Slot {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, Slot::Synthetic { .. })
    }

    pub fn record_id(&self) -> &str {
        match self {
            Slot::Real { i } | Slot::Synthetic { i, .. } => i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub alpha: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub batches: Vec<Vec<Slot>>,
}

#[derive(Serialize)]
struct PlanLine<'a> {
    batch: usize,
    slot: usize,
    kind: &'static str,
    i: &'a str,
    j: Option<u32>,
}

impl BatchPlan {
    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.batches.iter().flatten()
    }

    pub fn synthetic_fraction(&self) -> f64 {
        let total = self.slots().count();
        if total == 0 {
            return 0.0;
        }
        self.slots().filter(|s| s.is_synthetic()).count() as f64 / total as f64
    }

    /// One line per slot, in batch then slot order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (b, batch) in self.batches.iter().enumerate() {
            for (s, slot) in batch.iter().enumerate() {
                let line = match slot {
                    Slot::Real { i } => PlanLine {
                        batch: b,
                        slot: s,
                        kind: "real",
                        i,
                        j: None,
                    },
                    Slot::Synthetic { i, j } => PlanLine {
                        batch: b,
                        slot: s,
                        kind: "synthetic",
                        i,
                        j: Some(*j),
                    },
                };
                let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("plan line serializes"));
            }
        }
        out
    }
}

/// Draws `num_batches * batch_size` slots.
///
/// Each slot has its own ChaCha stream (keyed by its global index), so a
/// slot's outcome does not depend on how the others were produced. A record
/// is picked uniformly from `real_ids`; the slot turns synthetic with
/// probability `alpha`, using a variant drawn uniformly from the record's
/// kept list. Records with no kept variants always yield real slots.
pub fn plan_batches(
    real_ids: &[String],
    synth_index: &BTreeMap<String, Vec<u32>>,
    alpha: f64,
    batch_size: usize,
    num_batches: usize,
    seed: u64,
) -> Result<BatchPlan, SampleError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SampleError::InvalidAlpha(alpha));
    }
    if real_ids.is_empty() {
        return Err(SampleError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(SampleError::InvalidBatchSize);
    }
    let kept: BTreeMap<&str, Vec<u32>> = synth_index
        .iter()
        .map(|(k, v)| {
            let set: BTreeSet<u32> = v.iter().copied().collect();
            (k.as_str(), set.into_iter().collect())
        })
        .collect();

    let mut batches = Vec::with_capacity(num_batches);
    for b in 0..num_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for s in 0..batch_size {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((b * batch_size + s) as u64);
            let i = &real_ids[rng.gen_range(0..real_ids.len())];
            let u: f64 = rng.gen();
            let variants = kept.get(i.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let slot = if u < alpha && !variants.is_empty() {
                let j = variants[rng.gen_range(0..variants.len())];
                Slot::Synthetic { i: i.clone(), j }
            } else {
                Slot::Real { i: i.clone() }
            };
            batch.push(slot);
        }
        batches.push(batch);
    }
    Ok(BatchPlan {
        alpha,
        seed,
        batch_size,
        batches,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub num_folds: usize,
    pub folds: Vec<Vec<u8>>,
}

impl FoldSplit {
    pub fn fold(&self, fold: usize) -> Result<&[u8], SampleError> {
        self.folds.get(fold).map(Vec::as_slice).ok_or(SampleError::UnknownFold {
            fold,
            num_folds: self.num_folds,
        })
    }
}

/// Contiguous equal-size folds over `class_ids` in the given order.
pub fn split_folds(class_ids: &[u8], num_folds: usize) -> Result<FoldSplit, SampleError> {
    let n = class_ids.len();
    if num_folds == 0 || n == 0 || n % num_folds != 0 {
        return Err(SampleError::NotDivisible {
            classes: n,
            folds: num_folds,
        });
    }
    let folds = (0..num_folds)
        .map(|f| class_ids[f * n / num_folds..(f + 1) * n / num_folds].to_vec())
        .collect();
    Ok(FoldSplit { num_folds, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    /// Training side: drop records touching the held-out fold.
    TrainExcludeFold,
    /// Evaluation side: keep only records touching the held-out fold.
    TestOnlyFold,
}

/// Anything carrying the set of classes it contains.
pub trait ClassSet {
    fn class_ids(&self) -> &[u8];
}

impl ClassSet for Vec<u8> {
    fn class_ids(&self) -> &[u8] {
        self
    }
}

pub fn filter_by_fold<'a, T: ClassSet>(
    records: &'a [T],
    split: &FoldSplit,
    fold: usize,
    mode: FoldMode,
) -> Result<Vec<&'a T>, SampleError> {
    let held: BTreeSet<u8> = split.fold(fold)?.iter().copied().collect();
    Ok(records
        .iter()
        .filter(|r| {
            let touches = r.class_ids().iter().any(|c| held.contains(c));
            match mode {
                FoldMode::TrainExcludeFold => !touches,
                FoldMode::TestOnlyFold => touches,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i:03}")).collect()
    }

    fn full_index(n: usize, k: u32) -> BTreeMap<String, Vec<u32>> {
        ids(n).into_iter().map(|i| (i, (0..k).collect())).collect()
    }

    #[test]
    fn degenerate_alphas() {
        let idx = full_index(5, 3);
        let p = plan_batches(&ids(5), &idx, 0.0, 8, 10, 1).unwrap();
        assert!(p.slots().all(|s| !s.is_synthetic()));
        let p = plan_batches(&ids(5), &idx, 1.0, 8, 10, 1).unwrap();
        assert!(p.slots().all(Slot::is_synthetic));
    }

    #[test]
    fn records_without_variants_stay_real() {
        let mut idx = full_index(2, 2);
        idx.insert("r001".into(), vec![]);
        let p = plan_batches(&ids(2), &idx, 1.0, 16, 4, 9).unwrap();
        for s in p.slots() {
            assert_eq!(s.is_synthetic(), s.record_id() == "r000");
        }
    }

    #[test]
    fn validation() {
        let idx = full_index(1, 1);
        assert_eq!(plan_batches(&ids(1), &idx, 1.5, 1, 1, 0), Err(SampleError::InvalidAlpha(1.5)));
        assert!(matches!(plan_batches(&ids(1), &idx, f64::NAN, 1, 1, 0), Err(SampleError::InvalidAlpha(_))));
        assert_eq!(plan_batches(&[], &idx, 0.5, 1, 1, 0), Err(SampleError::EmptyDataset));
        assert_eq!(plan_batches(&ids(1), &idx, 0.5, 0, 1, 0), Err(SampleError::InvalidBatchSize));
    }

    #[test]
    fn jsonl_shape() {
        let plan = BatchPlan {
            alpha: 0.5,
            seed: 0,
            batch_size: 2,
            batches: vec![vec![
                Slot::Real { i: "a".into() },
                Slot::Synthetic { i: "b".into(), j: 3 },
            ]],
        };
        assert_eq!(
            plan.to_jsonl(),
            "{\"batch\":0,\"slot\":0,\"kind\":\"real\",\"i\":\"a\",\"j\":null}\n\
             {\"batch\":0,\"slot\":1,\"kind\":\"synthetic\",\"i\":\"b\",\"j\":3}\n"
        );
    }

    #[test]
    fn voc_and_coco_folds() {
        let voc: Vec<u8> = (1..=20).collect();
        let f = split_folds(&voc, 4).unwrap();
        assert_eq!(f.folds[0], vec![1, 2, 3, 4, 5]);
        assert_eq!(f.folds[3], vec![16, 17, 18, 19, 20]);
        let coco: Vec<u8> = (1..=80).collect();
        assert!(split_folds(&coco, 4).unwrap().folds.iter().all(|f| f.len() == 20));
        assert_eq!(
            split_folds(&(0..10).collect::<Vec<u8>>(), 3),
            Err(SampleError::NotDivisible { classes: 10, folds: 3 })
        );
    }

    #[test]
    fn fold_filtering() {
        let split = split_folds(&(1..=20).collect::<Vec<u8>>(), 4).unwrap();
        let records = vec![vec![1u8, 3], vec![7, 12], vec![2, 9]];
        let train = filter_by_fold(&records, &split, 0, FoldMode::TrainExcludeFold).unwrap();
        assert_eq!(train, vec![&records[1]]);
        let test = filter_by_fold(&records, &split, 0, FoldMode::TestOnlyFold).unwrap();
        assert_eq!(test, vec![&records[0], &records[2]]);
        assert!(filter_by_fold(&records, &split, 4, FoldMode::TestOnlyFold).is_err());
    }

    proptest! {
        #[test]
        fn plan_references_kept_variants(
            n in 1usize..8,
            ks in proptest::collection::vec(0u32..4, 8),
            alpha in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let idx: BTreeMap<String, Vec<u32>> =
                ids(n).into_iter().zip(&ks).map(|(i, &k)| (i, (0..k).collect())).collect();
            let a = plan_batches(&ids(n), &idx, alpha, 4, 5, seed).unwrap();
            prop_assert_eq!(&a, &plan_batches(&ids(n), &idx, alpha, 4, 5, seed).unwrap());
            for s in a.slots() {
                if let Slot::Synthetic { i, j } = s {
                    prop_assert!(idx[i].contains(j));
                }
            }
        }

        #[test]
        fn folds_partition(folds in 1usize..6, per in 1usize..10) {
            let classes: Vec<u8> = (0..(folds * per) as u8).collect();
            let split = split_folds(&classes, folds).unwrap();
            let joined: Vec<u8> = split.folds.concat();
            prop_assert_eq!(joined, classes);
        }
    }
}
