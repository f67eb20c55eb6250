use nalgebra::{DMatrix, DVector};

use super::TargetModel;
use crate::error::{Error, Result};

/// `U(x) = (x - μ)ᵀ Σ⁻¹ (x - μ) / 2`, a validation target with known moments.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    max_precision_eigenvalue: f64,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
            });
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 * (1.0 + covariance.amax()) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        let precision = chol.inverse();
        let max_precision_eigenvalue = precision
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0_f64, f64::max);
        Ok(GaussianTarget {
            mean: DVector::from_vec(mean),
            precision,
            max_precision_eigenvalue,
        })
    }

    /// `N(0, I_d)`.
    pub fn standard(d: usize) -> Self {
        GaussianTarget {
            mean: DVector::zeros(d),
            precision: DMatrix::identity(d, d),
            max_precision_eigenvalue: 1.0,
        }
    }

    /// Independent coordinates with the given variances.
    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        Self::new(mean, DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    fn centred(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x) - &self.mean
    }
}

impl TargetModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let r = self.centred(x);
        0.5 * r.dot(&(&self.precision * &r))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.precision * self.centred(x);
        out.copy_from_slice(g.as_slice());
    }

    fn hessian_bound(&self) -> f64 {
        self.max_precision_eigenvalue
    }
}
