use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::types::SemanticMask;

/// Pixel confusion matrix, rows = ground truth, columns = prediction.
///
/// A pixel is skipped when either map holds the ignore index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    num_classes: usize,
    ignore_index: u8,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    /// `None` where the class is absent from both maps.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean: f64,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize, ignore_index: u8) -> Self {
        Self {
            num_classes,
            ignore_index,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn check_label(&self, label: u8) -> Result<(), MetricsError> {
        if label != self.ignore_index && label as usize >= self.num_classes {
            return Err(MetricsError::ClassOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, pred: &SemanticMask, gt: &SemanticMask) -> Result<(), MetricsError> {
        if !pred.same_extent(gt) {
            return Err(MetricsError::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        // Validate first so a failed call leaves the counts untouched.
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.check_label(p)?;
            self.check_label(g)?;
        }
        let n = self.num_classes;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if p == self.ignore_index || g == self.ignore_index {
                continue;
            }
            self.counts[g as usize * n + p as usize] += 1;
        }
        Ok(())
    }

    /// Adds counts computed independently (e.g. on another worker).
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<(), MetricsError> {
        if other.num_classes != self.num_classes || other.ignore_index != self.ignore_index {
            return Err(MetricsError::DimensionMismatch {
                expected: self.num_classes,
                found: other.num_classes,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// TP / (TP + FP + FN) for one class, `None` when its union is empty.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let n = self.num_classes;
        let tp = self.get(class, class);
        let gt_total: u64 = (0..n).map(|p| self.get(class, p)).sum();
        let pred_total: u64 = (0..n).map(|g| self.get(g, class)).sum();
        let union = gt_total + pred_total - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes).map(|c| self.iou(c)).collect()
    }

    /// Mean IoU over classes with a non-empty union.
    pub fn mean_iou(&self) -> Result<f64, MetricsError> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(MetricsError::NoValidPixels);
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// Mean IoU restricted to `classes`; classes with an empty union count as 0.
    pub fn mean_iou_over(&self, classes: &[u8]) -> Result<f64, MetricsError> {
        if classes.is_empty() {
            return Err(MetricsError::NoValidPixels);
        }
        let mut sum = 0.0;
        for &c in classes {
            if c as usize >= self.num_classes {
                return Err(MetricsError::ClassOutOfRange {
                    label: c,
                    num_classes: self.num_classes,
                });
            }
            sum += self.iou(c as usize).unwrap_or(0.0);
        }
        Ok(sum / classes.len() as f64)
    }

    pub fn pixel_accuracy(&self) -> Result<f64, MetricsError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricsError::NoValidPixels);
        }
        let correct: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        Ok(correct as f64 / total as f64)
    }

    pub fn result(&self) -> Result<MiouResult, MetricsError> {
        Ok(MiouResult {
            per_class_iou: self.per_class_iou(),
            mean: self.mean_iou()?,
        })
    }
}

/// Streaming form: folds one more image pair into `counts`.
pub fn accumulate_confusion(
    pred: &SemanticMask,
    gt: &SemanticMask,
    mut counts: ConfusionCounts,
) -> Result<ConfusionCounts, MetricsError> {
    counts.add(pred, gt)?;
    Ok(counts)
}

pub fn miou(
    pred: &SemanticMask,
    gt: &SemanticMask,
    num_classes: usize,
    ignore_index: u8,
) -> Result<MiouResult, MetricsError> {
    let mut counts = ConfusionCounts::new(num_classes, ignore_index);
    counts.add(pred, gt)?;
    counts.result()
}

/// Correct / evaluated pixels, skipping pixels where either map is `ignore_index`.
pub fn pixel_accuracy(pred: &SemanticMask, gt: &SemanticMask, ignore_index: u8) -> Result<f64, MetricsError> {
    if !pred.same_extent(gt) {
        return Err(MetricsError::ShapeMismatch("prediction and ground truth differ in size".into()));
    }
    let mut total = 0u64;
    let mut correct = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p == ignore_index || g == ignore_index {
            continue;
        }
        total += 1;
        correct += (p == g) as u64;
    }
    if total == 0 {
        return Err(MetricsError::NoValidPixels);
    }
    Ok(correct as f64 / total as f64)
}
