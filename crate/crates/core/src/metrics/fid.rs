use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Eigenvalues in `[-PSD_TOLERANCE, 0)` are rounding noise and clamp to 0;
/// anything more negative is reported as a numerical failure.
pub const PSD_TOLERANCE: f64 = 1e-6;
const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Gaussian fit of a feature set: sample mean and (n-1)-normalized covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub covariance: Vec<f64>,
    pub sample_count: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_parts(mean: Vec<f64>, covariance: Vec<f64>, sample_count: usize) -> Result<Self, MetricsError> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(MetricsError::DimensionMismatch {
                expected: d * d,
                found: covariance.len(),
            });
        }
        let stats = Self {
            mean,
            covariance,
            sample_count,
        };
        stats.check_symmetric()?;
        Ok(stats)
    }

    fn check_symmetric(&self) -> Result<(), MetricsError> {
        let d = self.dim();
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (self.covariance[i * d + j], self.covariance[j * d + i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE {
                    return Err(MetricsError::NumericalFailure(format!(
                        "covariance is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.covariance)
    }
}

pub fn feature_stats(vectors: &[Vec<f64>]) -> Result<FeatureStats, MetricsError> {
    let n = vectors.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, have: n });
    }
    let d = vectors[0].len();
    if d == 0 {
        return Err(MetricsError::DimensionMismatch { expected: 1, found: 0 });
    }
    for v in vectors {
        if v.len() != d {
            return Err(MetricsError::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MetricsError::NumericalFailure("non-finite feature value".into()));
        }
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut covariance = vec![0.0; d * d];
    for v in vectors {
        for i in 0..d {
            let di = v[i] - mean[i];
            for j in i..d {
                covariance[i * d + j] += di * (v[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let c = covariance[i * d + j] / (n - 1) as f64;
            covariance[i * d + j] = c;
            covariance[j * d + i] = c;
        }
    }
    Ok(FeatureStats {
        mean,
        covariance,
        sample_count: n,
    })
}

fn clamped_eigenvalues(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, MetricsError> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    for lambda in eig.eigenvalues.iter_mut() {
        if !lambda.is_finite() {
            return Err(MetricsError::NumericalFailure(format!("{what}: non-finite eigenvalue")));
        }
        if *lambda < -PSD_TOLERANCE {
            return Err(MetricsError::NumericalFailure(format!(
                "{what} is not positive semi-definite (eigenvalue {lambda:e})"
            )));
        }
        if *lambda < 0.0 {
            *lambda = 0.0;
        }
    }
    Ok(eig)
}

/// Fréchet distance between two Gaussians:
/// `|mu_a - mu_b|^2 + tr(S_a) + tr(S_b) - 2 tr((S_a S_b)^(1/2))`.
///
/// The trace of the product root is computed as
/// `tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))`, whose argument is symmetric PSD.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    a.check_symmetric()?;
    b.check_symmetric()?;
    let mu_a = DVector::from_column_slice(&a.mean);
    let mu_b = DVector::from_column_slice(&b.mean);
    let mean_term = (&mu_a - &mu_b).norm_squared();

    let cov_a = a.cov_matrix();
    let cov_b = b.cov_matrix();
    let eig_a = clamped_eigenvalues(cov_a.clone(), "first covariance")?;
    let root_vals = DMatrix::from_diagonal(&eig_a.eigenvalues.map(f64::sqrt));
    let root_a = &eig_a.eigenvectors * root_vals * eig_a.eigenvectors.transpose();
    let inner = &root_a * &cov_b * &root_a;
    let eig_inner = clamped_eigenvalues(inner, "covariance product")?;
    let trace_root: f64 = eig_inner.eigenvalues.iter().map(|l| l.sqrt()).sum();

    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_root;
    if !value.is_finite() {
        return Err(MetricsError::NumericalFailure("FID is not finite".into()));
    }
    Ok(value.max(0.0))
}
