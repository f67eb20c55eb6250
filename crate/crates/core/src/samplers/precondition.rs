use nalgebra::{DMatrix, DVector};

use crate::domain::Polytope;
use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::trajectory::Trajectory;

/// Change of variables `x = C y` with `C Cᵀ = M` the lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    factor: DMatrix<f64>,
    factor_inv: DMatrix<f64>,
    /// Largest eigenvalue of `M`, the squared spectral norm of `C`.
    max_eigenvalue: f64,
}

impl Preconditioner {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::NotPositiveDefinite);
        }
        if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let factor = chol.l();
        let factor_inv = factor
            .clone()
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite)?;
        let max_eigenvalue = m.clone().symmetric_eigenvalues().max();
        Ok(Preconditioner {
            factor,
            factor_inv,
            max_eigenvalue,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Preconditioner {
            factor: DMatrix::identity(dim, dim),
            factor_inv: DMatrix::identity(dim, dim),
            max_eigenvalue: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }

    /// `x = C y`.
    pub fn to_original(&self, y: &[f64]) -> Vec<f64> {
        (&self.factor * DVector::from_column_slice(y)).iter().copied().collect()
    }

    /// `y = C⁻¹ x`.
    pub fn to_whitened(&self, x: &[f64]) -> Vec<f64> {
        (&self.factor_inv * DVector::from_column_slice(x)).iter().copied().collect()
    }

    /// The domain seen from `y`: `(Cᵀ g) · y <= c`.
    pub fn domain(&self, domain: &Polytope) -> Result<Polytope> {
        domain.pull_back(&self.factor)
    }

    pub fn model<M: TargetModel>(&self, model: M) -> Result<Preconditioned<M>> {
        if model.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: model.dim(),
            });
        }
        Ok(Preconditioned {
            inner: model,
            factor: self.factor.clone(),
            max_eigenvalue: self.max_eigenvalue,
        })
    }

    /// Maps a trajectory simulated in `y` back to `x`.
    pub fn map_back(&self, traj: &Trajectory) -> Trajectory {
        traj.map_linear(&self.factor)
    }
}

/// `U'(y) = U(C y)`, `∇U'(y) = Cᵀ ∇U(C y)`.
#[derive(Debug, Clone)]
pub struct Preconditioned<M> {
    inner: M,
    factor: DMatrix<f64>,
    max_eigenvalue: f64,
}

impl<M> Preconditioned<M> {
    pub fn inner(&self) -> &M {
        &self.inner
    }

    fn lift(&self, y: &[f64]) -> Vec<f64> {
        (&self.factor * DVector::from_column_slice(y)).iter().copied().collect()
    }

    fn pull_gradient(&self, g: &[f64], out: &mut [f64]) {
        let pulled = self.factor.tr_mul(&DVector::from_column_slice(g));
        out.copy_from_slice(pulled.as_slice());
    }
}

impl<M: TargetModel> TargetModel for Preconditioned<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn num_data(&self) -> usize {
        self.inner.num_data()
    }

    fn potential(&self, y: &[f64]) -> f64 {
        self.inner.potential(&self.lift(y))
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        let mut g = vec![0.0; out.len()];
        self.inner.gradient(&self.lift(y), &mut g);
        self.pull_gradient(&g, out);
    }

    fn datum_gradient(&self, i: usize, y: &[f64], out: &mut [f64]) {
        let mut g = vec![0.0; out.len()];
        self.inner.datum_gradient(i, &self.lift(y), &mut g);
        self.pull_gradient(&g, out);
    }

    fn hessian_bound(&self) -> f64 {
        self.inner.hessian_bound() * self.max_eigenvalue
    }

    fn datum_hessian_bound(&self) -> f64 {
        self.inner.datum_hessian_bound() * self.max_eigenvalue
    }

    fn potential_and_gradient(&self, y: &[f64], out: &mut [f64]) -> f64 {
        let mut g = vec![0.0; out.len()];
        let u = self.inner.potential_and_gradient(&self.lift(y), &mut g);
        self.pull_gradient(&g, out);
        u
    }
}
