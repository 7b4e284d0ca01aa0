use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Allowed deviation of a row sum from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InceptionScore {
    pub mean: f64,
    /// Population standard deviation across splits.
    pub std: f64,
}

/// Neumaier-compensated sum.
fn stable_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// `exp(E_x KL(p(y|x) || p(y)))` per split, with `p(y)` the split marginal.
///
/// Rows are split into `splits` contiguous chunks (`[k*N/splits, (k+1)*N/splits)`).
/// Terms with `p(y|x) = 0` contribute nothing.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<InceptionScore, MetricsError> {
    let n = probs.len();
    if splits == 0 || n < splits {
        return Err(MetricsError::TooFewSamples {
            needed: splits.max(1),
            have: n,
        });
    }
    let classes = probs[0].len();
    for (row, p) in probs.iter().enumerate() {
        if p.len() != classes {
            return Err(MetricsError::DimensionMismatch {
                expected: classes,
                found: p.len(),
            });
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&v| !(v >= 0.0)) || !((sum - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
            return Err(MetricsError::NotNormalized { row, sum });
        }
    }

    let mut scores = Vec::with_capacity(splits);
    for k in 0..splits {
        let chunk = &probs[k * n / splits..(k + 1) * n / splits];
        let marginal: Vec<f64> = (0..classes)
            .map(|y| stable_sum(chunk.iter().map(|p| p[y])) / chunk.len() as f64)
            .collect();
        let mean_kl = stable_sum(chunk.iter().map(|p| {
            stable_sum(
                p.iter()
                    .zip(&marginal)
                    .filter(|(&pv, _)| pv > 0.0)
                    .map(|(&pv, &mv)| pv * (pv.ln() - mv.ln())),
            )
        })) / chunk.len() as f64;
        scores.push(mean_kl.exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok(InceptionScore { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rows_score_one() {
        for (rows, classes) in [(9, 4), (50, 10), (1000, 1000), (7, 3)] {
            let probs = vec![vec![1.0 / classes as f64; classes]; rows];
            let s = inception_score(&probs, 1).unwrap();
            assert_eq!(s.mean, 1.0, "{rows}x{classes}");
            assert_eq!(s.std, 0.0);
        }
    }

    #[test]
    fn compensated_sum() {
        assert_eq!(stable_sum([1e16, 1.0, -1e16].into_iter()), 1.0);
        assert_eq!(stable_sum(std::iter::repeat(0.1).take(50)) / 50.0, 0.1);
    }

    #[test]
    fn distinct_one_hots_score_class_count() {
        let c = 7;
        let probs: Vec<Vec<f64>> = (0..c)
            .map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let s = inception_score(&probs, 1).unwrap();
        assert!((s.mean - c as f64).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            inception_score(&[vec![0.5, 0.6]], 1),
            Err(MetricsError::NotNormalized { row: 0, .. })
        ));
        assert!(matches!(
            inception_score(&[vec![1.0, 0.0]], 2),
            Err(MetricsError::TooFewSamples { .. })
        ));
        assert!(matches!(inception_score(&[], 1), Err(MetricsError::TooFewSamples { .. })));
    }

    #[test]
    fn splits_report_spread() {
        // First half confident and diverse, second half uniform.
        let probs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.5, 0.5]];
        let s = inception_score(&probs, 2).unwrap();
        assert!((s.mean - 1.5).abs() < 1e-12);
        assert!((s.std - 0.5).abs() < 1e-12);
    }
}
