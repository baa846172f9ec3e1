use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multivariate Normal described by its mean and covariance.
///
/// Construction checks symmetry (to 1e-10) and that a Cholesky factor exists.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianApprox {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

const SYMMETRY_TOL: f64 = 1e-10;

impl GaussianApprox {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if cov.nrows() != m || cov.ncols() != m {
            return Err(Error::Config(format!(
                "covariance is {}x{}, mean has length {m}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("non-finite mean".into()));
        }
        for i in 0..m {
            for j in 0..i {
                let scale = cov[(i, j)].abs().max(cov[(j, i)].abs()).max(1.0);
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if m > 0 && Cholesky::new(cov.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("covariance has no Cholesky factor".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(variances));
        Self::new(DVector::from_vec(mean), cov)
    }

    /// Zero-dimensional distribution (a block with no coordinates).
    pub fn empty() -> Self {
        Self { mean: DVector::zeros(0), cov: DMatrix::zeros(0, 0) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.cov.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("covariance has no Cholesky factor".into()))
    }

    /// `ln det(cov)` through the Cholesky factor.
    pub fn log_det(&self) -> Result<f64> {
        let l = self.cholesky()?;
        Ok(2.0 * l.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// Serializable form (row-major covariance).
    pub fn to_record(&self) -> GaussianRecord {
        let m = self.dim();
        GaussianRecord {
            mean: self.mean.iter().copied().collect(),
            cov: (0..m).map(|i| (0..m).map(|j| self.cov[(i, j)]).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianRecord {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}
