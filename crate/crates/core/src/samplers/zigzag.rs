use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{zigzag_flip, BoundaryKernel, GradientCache, GradientMode};
use crate::domain::Polytope;
use crate::error::{Error, Result};
use crate::event::AffineRateBound;
use crate::models::TargetModel;
use crate::pdmp::Dynamics;
use crate::trajectory::{EventKind, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZigZagSpec {
    pub dim: usize,
}

impl ZigZagSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("zig-zag dimension must be at least 1".into()));
        }
        Ok(ZigZagSpec { dim })
    }
}

/// Zig-zag sampler: one clock per coordinate, velocities in `{-1, +1}^d`.
///
/// At a face the components of `v` on which the face normal is supported are
/// negated. On axis-aligned faces this is the mirror reflection; on general
/// faces it still reverses `n · v` and is an involution of `{-1, +1}^d`.
#[derive(Debug, Clone)]
pub struct ZigZag<M> {
    model: M,
    mode: GradientMode,
    boundary: BoundaryKernel,
    cache: GradientCache,
    scratch: Vec<f64>,
    grad_evals: u64,
}

impl<M: TargetModel> ZigZag<M> {
    pub fn new(model: M, mode: GradientMode) -> Result<Self> {
        ZigZagSpec::new(model.dim())?;
        if let GradientMode::Subsampled(cv) = &mode {
            if cv.x_hat().len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: cv.x_hat().len(),
                });
            }
        }
        let d = model.dim();
        Ok(ZigZag {
            model,
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

    /// Uniform draw from `{-1, +1}^d`.
    pub fn initial_velocity<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        random_signs(self.model.dim(), rng)
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

fn random_signs<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

impl<M: TargetModel> Dynamics for ZigZag<M> {
    type Estimate = ();

    fn name(&self) -> &'static str {
        "zigzag"
    }

    fn clock_count(&self) -> usize {
        self.model.dim()
    }

    fn bounds(&mut self, state: &State, out: &mut [AffineRateBound]) -> Result<()> {
        let speed = (state.dim() as f64).sqrt();
        match &self.mode {
            GradientMode::Exact => {
                // |d/du v_i ∂_i U(x + u v)| = |e_iᵀ H v| <= Λ ‖v‖.
                let g = self.exact_gradient(&state.x);
                let slope = self.model.hessian_bound() * speed;
                for (i, b) in out.iter_mut().enumerate() {
                    *b = AffineRateBound::new((state.v[i] * g[i]).max(0.0), slope);
                }
            }
            GradientMode::Subsampled(cv) => {
                for (i, b) in out.iter_mut().enumerate() {
                    *b = cv.affine_bound_zigzag(&state.x, &state.v, i);
                }
            }
        }
        Ok(())
    }

    fn rate<R: Rng + ?Sized>(&mut self, clock: usize, state: &State, rng: &mut R) -> Result<(f64, ())> {
        let component = match &self.mode {
            GradientMode::Exact => self.exact_gradient(&state.x)[clock],
            GradientMode::Subsampled(cv) => {
                cv.estimate_grad(&self.model, &state.x, rng, &mut self.scratch);
                self.grad_evals += cv.evals_per_estimate();
                self.scratch[clock]
            }
        };
        Ok(((state.v[clock] * component).max(0.0), ()))
    }

    fn jump<R: Rng + ?Sized>(
        &mut self,
        clock: usize,
        state: &State,
        _: (),
        _: &mut R,
    ) -> (Vec<f64>, EventKind) {
        (zigzag_flip(&state.v, clock), EventKind::Switch(clock))
    }

    fn reflect<R: Rng + ?Sized>(
        &mut self,
        state: &State,
        domain: &Polytope,
        face: usize,
        rng: &mut R,
    ) -> Vec<f64> {
        match self.boundary {
            BoundaryKernel::Specular => {
                let g = &domain.constraints()[face].g;
                state
                    .v
                    .iter()
                    .zip(g)
                    .map(|(vi, gi)| if *gi != 0.0 { -vi } else { *vi })
                    .collect()
            }
            BoundaryKernel::Resample => random_signs(state.dim(), rng),
        }
    }

    fn grad_evals(&self) -> u64 {
        self.grad_evals
    }
}
