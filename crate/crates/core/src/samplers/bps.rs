use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bps_bounce, bps_refresh, BoundaryKernel, GradientCache, GradientMode, VelocityLaw};
use crate::domain::{resample_boundary, specular_reflect, Polytope};
use crate::error::{Error, Result};
use crate::event::AffineRateBound;
use crate::linalg::dot;
use crate::models::TargetModel;
use crate::pdmp::Dynamics;
use crate::trajectory::{EventKind, State};

pub const DEFAULT_REFRESH_RATE: f64 = 1.0;

/// Settings of the bouncy particle sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpsSpec {
    #[serde(default)]
    pub velocity_law: VelocityLaw,
    #[serde(default = "default_refresh")]
    pub refresh_rate: f64,
    /// Symmetric positive definite `M`, applied through `x = C y` with `M = C Cᵀ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preconditioner: Option<Vec<Vec<f64>>>,
}

fn default_refresh() -> f64 {
    DEFAULT_REFRESH_RATE
}

impl Default for BpsSpec {
    fn default() -> Self {
        BpsSpec {
            velocity_law: VelocityLaw::UniformSphere,
            refresh_rate: DEFAULT_REFRESH_RATE,
            preconditioner: None,
        }
    }
}

impl BpsSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.refresh_rate >= 0.0 && self.refresh_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "refresh rate must be finite and non-negative, got {}",
                self.refresh_rate
            )));
        }
        if self.refresh_rate == 0.0 {
            log::warn!("bouncy particle sampler without refreshment may be reducible");
        }
        if self.preconditioner.is_some() {
            self.preconditioner_matrix()?;
        }
        Ok(())
    }

    pub fn preconditioner_matrix(&self) -> Result<Option<DMatrix<f64>>> {
        let Some(rows) = &self.preconditioner else {
            return Ok(None);
        };
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("preconditioner must be square".into()));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
            return Err(Error::NotPositiveDefinite);
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Some(m))
    }
}

/// Bouncy particle sampler. Clock 0 is the bounce clock; clock 1, present
/// when the refresh rate is positive, is an independent refreshment clock.
#[derive(Debug, Clone)]
pub struct Bps<M> {
    model: M,
    law: VelocityLaw,
    refresh_rate: f64,
    mode: GradientMode,
    boundary: BoundaryKernel,
    cache: GradientCache,
    scratch: Vec<f64>,
    grad_evals: u64,
}

impl<M: TargetModel> Bps<M> {
    pub fn new(model: M, law: VelocityLaw, refresh_rate: f64, mode: GradientMode) -> Result<Self> {
        if !(refresh_rate >= 0.0 && refresh_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("refresh rate {refresh_rate}")));
        }
        if refresh_rate == 0.0 {
            log::warn!("bouncy particle sampler without refreshment may be reducible");
        }
        if matches!(mode, GradientMode::Subsampled(_)) && law != VelocityLaw::UniformSphere {
            return Err(Error::Unsupported(
                "subsampled bouncy particle sampler needs unit-speed velocities".into(),
            ));
        }
        if let GradientMode::Subsampled(cv) = &mode {
            if cv.x_hat().len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: cv.x_hat().len(),
                });
            }
        }
        let d = model.dim();
        Ok(Bps {
            model,
            law,
            refresh_rate,
            mode,
            boundary: BoundaryKernel::Specular,
            cache: GradientCache::default(),
            scratch: vec![0.0; d],
            grad_evals: 0,
        })
    }

    pub fn with_boundary(mut self, boundary: BoundaryKernel) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn velocity_law(&self) -> VelocityLaw {
        self.law
    }

    /// Draws an initial velocity from the velocity law.
    pub fn initial_velocity<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.law.sample(self.model.dim(), rng)
    }

    fn exact_gradient(&mut self, x: &[f64]) -> Vec<f64> {
        if let Some(g) = self.cache.get(x) {
            return g.to_vec();
        }
        let mut g = vec![0.0; self.model.dim()];
        self.model.gradient(x, &mut g);
        self.grad_evals += self.model.num_data() as u64;
        self.cache.store(x, &g);
        g
    }
}

impl<M: TargetModel> Dynamics for Bps<M> {
    type Estimate = Vec<f64>;

    fn name(&self) -> &'static str {
        "bps"
    }

    fn clock_count(&self) -> usize {
        if self.refresh_rate > 0.0 {
            2
        } else {
            1
        }
    }

    fn bounds(&mut self, state: &State, out: &mut [AffineRateBound]) -> Result<()> {
        out[0] = match &self.mode {
            GradientMode::Exact => {
                // v·∇U(x + u v) <= v·∇U(x) + u Λ ‖v‖² for a Λ-smooth potential.
                let g = self.exact_gradient(&state.x);
                let vv = dot(&state.v, &state.v);
                AffineRateBound::new(dot(&g, &state.v).max(0.0), self.model.hessian_bound() * vv)
            }
            GradientMode::Subsampled(cv) => cv.affine_bound_bps(&state.x, &state.v)?,
        };
        if self.refresh_rate > 0.0 {
            out[1] = AffineRateBound::constant(self.refresh_rate);
        }
        Ok(())
    }

    fn rate<R: Rng + ?Sized>(
        &mut self,
        clock: usize,
        state: &State,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        if clock == 1 {
            return Ok((self.refresh_rate, Vec::new()));
        }
        let g = match &self.mode {
            GradientMode::Exact => self.exact_gradient(&state.x),
            GradientMode::Subsampled(cv) => {
                cv.estimate_grad(&self.model, &state.x, rng, &mut self.scratch);
                self.grad_evals += cv.evals_per_estimate();
                self.scratch.clone()
            }
        };
        Ok((dot(&g, &state.v).max(0.0), g))
    }

    fn jump<R: Rng + ?Sized>(
        &mut self,
        clock: usize,
        state: &State,
        estimate: Vec<f64>,
        rng: &mut R,
    ) -> (Vec<f64>, EventKind) {
        if clock == 1 {
            return (
                bps_refresh(self.law, state.dim(), rng),
                EventKind::Refresh,
            );
        }
        // An accepted bounce has a positive rate, hence a nonzero gradient.
        let v = bps_bounce(&state.v, &estimate).unwrap_or_else(|_| state.v.clone());
        (v, EventKind::Switch(0))
    }

    fn reflect<R: Rng + ?Sized>(
        &mut self,
        state: &State,
        domain: &Polytope,
        face: usize,
        rng: &mut R,
    ) -> Vec<f64> {
        match self.boundary {
            BoundaryKernel::Specular => specular_reflect(&state.v, &domain.outward_normal(face)),
            BoundaryKernel::Resample => resample_boundary(self.law, state.dim(), rng),
        }
    }

    fn grad_evals(&self) -> u64 {
        self.grad_evals
    }
}
