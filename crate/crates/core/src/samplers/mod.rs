//! Bouncy particle and zig-zag dynamics.

mod bps;
mod precondition;
mod zigzag;

pub use bps::{Bps, BpsSpec};
pub use precondition::{Preconditioned, Preconditioner};
pub use zigzag::{ZigZag, ZigZagSpec};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::subsample::ControlVariate;

/// Stationary law `ρ` of the velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityLaw {
    GaussianIsotropic,
    #[default]
    UniformSphere,
}

impl VelocityLaw {
    pub fn sample<R: Rng + ?Sized>(self, dim: usize, rng: &mut R) -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if self == VelocityLaw::UniformSphere {
            let len = dot(&v, &v).sqrt();
            if len == 0.0 {
                return self.sample(dim, rng);
            }
            v.iter_mut().for_each(|c| *c /= len);
        }
        v
    }
}

/// What happens to the velocity at the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKernel {
    /// Deterministic mirror reflection in the face.
    #[default]
    Specular,
    /// Fresh draw from the velocity law, redrawn while it points outward.
    /// Experimental.
    Resample,
}

/// Source of the gradient used in the switching rates.
#[derive(Debug, Clone)]
pub enum GradientMode {
    /// Full gradient, `N` per-datum evaluations per rate evaluation.
    Exact,
    /// Single-datum control-variate estimate.
    Subsampled(ControlVariate),
}

/// `max(v · ∇U, 0)`.
pub fn bps_rate(grad: &[f64], v: &[f64]) -> f64 {
    dot(grad, v).max(0.0)
}

/// Reflects `v` in the hyperplane orthogonal to `grad`: `v - 2 (v·g / ‖g‖²) g`.
pub fn bps_bounce(v: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    let gg = dot(grad, grad);
    if gg < 1e-300 {
        return Err(Error::ZeroGradient);
    }
    let s = 2.0 * dot(v, grad) / gg;
    Ok(v.iter().zip(grad).map(|(vi, gi)| vi - s * gi).collect())
}

/// Fresh velocity drawn from `law`.
pub fn bps_refresh<R: Rng + ?Sized>(law: VelocityLaw, dim: usize, rng: &mut R) -> Vec<f64> {
    law.sample(dim, rng)
}

/// `max(v_i ∂_i U, 0)` for every coordinate.
pub fn zigzag_rates(grad: &[f64], v: &[f64]) -> Vec<f64> {
    grad.iter().zip(v).map(|(g, vi)| (vi * g).max(0.0)).collect()
}

/// Negates component `i` (zero-based).
pub fn zigzag_flip(v: &[f64], i: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out[i] = -out[i];
    out
}

/// Deterministic switching rates and kernels, as seen by the stationarity checks.
pub trait SwitchingScheme {
    fn clock_count(&self, dim: usize) -> usize;
    fn rate(&self, clock: usize, grad: &[f64], v: &[f64]) -> f64;
    /// Image of `v` under the switching kernel of `clock`.
    fn kernel(&self, clock: usize, grad: &[f64], v: &[f64]) -> Vec<f64>;
    /// Draw from the stationary velocity law.
    fn sample_velocity<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64>;
}

/// Bounce part of the bouncy particle sampler (refreshment excluded).
#[derive(Debug, Clone, Copy, Default)]
pub struct BpsScheme;

impl SwitchingScheme for BpsScheme {
    fn clock_count(&self, _: usize) -> usize {
        1
    }

    fn rate(&self, _: usize, grad: &[f64], v: &[f64]) -> f64 {
        bps_rate(grad, v)
    }

    fn kernel(&self, _: usize, grad: &[f64], v: &[f64]) -> Vec<f64> {
        bps_bounce(v, grad).unwrap_or_else(|_| v.to_vec())
    }

    fn sample_velocity<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        VelocityLaw::UniformSphere.sample(dim, rng)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZigZagScheme;

impl SwitchingScheme for ZigZagScheme {
    fn clock_count(&self, dim: usize) -> usize {
        dim
    }

    fn rate(&self, clock: usize, grad: &[f64], v: &[f64]) -> f64 {
        (v[clock] * grad[clock]).max(0.0)
    }

    fn kernel(&self, clock: usize, _: &[f64], v: &[f64]) -> Vec<f64> {
        zigzag_flip(v, clock)
    }

    fn sample_velocity<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        (0..dim)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect()
    }
}

/// Caches the most recent full gradient so that the envelope at the start of
/// an excursion reuses the evaluation made at the event that started it.
#[derive(Debug, Clone, Default)]
struct GradientCache {
    x: Vec<f64>,
    grad: Vec<f64>,
    valid: bool,
}

impl GradientCache {
    fn get(&self, x: &[f64]) -> Option<&[f64]> {
        (self.valid && self.x == x).then_some(self.grad.as_slice())
    }

    fn store(&mut self, x: &[f64], grad: &[f64]) {
        self.x.clear();
        self.x.extend_from_slice(x);
        self.grad.clear();
        self.grad.extend_from_slice(grad);
        self.valid = true;
    }
}
