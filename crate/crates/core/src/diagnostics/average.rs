use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::trajectory::Trajectory;

use super::ess::{ess_batch_means, EssReport};

/// `f(x) = c + b·x + xᵀ A x`, integrable in closed form along a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Row-major `d × d`; empty for affine functions.
    pub quadratic: Vec<f64>,
}

impl Quadratic {
    pub fn constant(c: f64, dim: usize) -> Self {
        Quadratic {
            constant: c,
            linear: vec![0.0; dim],
            quadratic: Vec::new(),
        }
    }

    pub fn coordinate(i: usize, dim: usize) -> Self {
        let mut linear = vec![0.0; dim];
        linear[i] = 1.0;
        Quadratic {
            constant: 0.0,
            linear,
            quadratic: Vec::new(),
        }
    }

    /// Mean of the coordinates, `(x_1 + ... + x_d) / d`.
    pub fn coordinate_mean(dim: usize) -> Self {
        Quadratic {
            constant: 0.0,
            linear: vec![1.0 / dim as f64; dim],
            quadratic: Vec::new(),
        }
    }

    pub fn coordinate_square(i: usize, dim: usize) -> Self {
        let mut quadratic = vec![0.0; dim * dim];
        quadratic[i * dim + i] = 1.0;
        Quadratic {
            constant: 0.0,
            linear: vec![0.0; dim],
            quadratic,
        }
    }

    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn form(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.quadratic.is_empty() {
            return 0.0;
        }
        let d = self.dim();
        (0..d)
            .map(|i| a[i] * (0..d).map(|j| self.quadratic[i * d + j] * b[j]).sum::<f64>())
            .sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + dot(&self.linear, x) + self.form(x, x)
    }

    /// `∫_0^D f(x0 + s v) ds`.
    fn segment_integral(&self, x0: &[f64], v: &[f64], duration: f64) -> f64 {
        let c0 = self.eval(x0);
        let c1 = dot(&self.linear, v) + self.form(x0, v) + self.form(v, x0);
        let c2 = self.form(v, v);
        duration * (c0 + duration * (c1 / 2.0 + duration * c2 / 3.0))
    }
}

/// A function of position to be averaged along a trajectory.
pub enum Observable<'a> {
    Polynomial(Quadratic),
    Function(&'a dyn Fn(&[f64]) -> f64),
}

impl Observable<'_> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Polynomial(q) => q.eval(x),
            Observable::Function(f) => f(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AverageMode {
    /// Closed-form integration along each segment.
    Exact,
    /// Mean over positions at evenly spaced times.
    Discretized(f64),
}

/// `(1/T) ∫_0^T f(X_s) ds` along the piecewise-linear path.
pub fn time_average(traj: &Trajectory, f: &Observable<'_>, mode: AverageMode) -> Result<f64> {
    let duration = traj.duration();
    match mode {
        AverageMode::Exact => {
            let Observable::Polynomial(q) = f else {
                return Err(Error::UnsupportedFunction);
            };
            if q.dim() != traj.dim() {
                return Err(Error::DimensionMismatch {
                    expected: traj.dim(),
                    got: q.dim(),
                });
            }
            if duration <= 0.0 {
                return Ok(q.eval(&traj.initial.x));
            }
            let total: f64 = traj
                .segments()
                .map(|seg| q.segment_integral(seg.x0, seg.v, seg.duration()))
                .sum();
            Ok(total / duration)
        }
        AverageMode::Discretized(dt) => {
            let points = traj.sample_evenly(dt)?;
            if points.is_empty() {
                return Err(Error::TooFewSamples { required: 1, got: 0 });
            }
            Ok(points.iter().map(|x| f.eval(x)).sum::<f64>() / points.len() as f64)
        }
    }
}

/// Default number of evenly spaced samples taken from a trajectory for ESS.
pub const DEFAULT_ESS_SAMPLES: usize = 10_000;

/// Batch-means report for `f` evaluated at `samples` evenly spaced times.
pub fn trajectory_ess(traj: &Trajectory, f: &Observable<'_>, samples: usize) -> Result<EssReport> {
    let points = discretize(traj, samples)?;
    let values: Vec<f64> = points.iter().map(|x| f.eval(x)).collect();
    ess_batch_means(&values)
}

/// `samples` positions spaced `duration / samples` apart.
pub fn discretize(traj: &Trajectory, samples: usize) -> Result<Vec<Vec<f64>>> {
    let duration = traj.duration();
    if !(duration > 0.0) || samples == 0 {
        return Err(Error::TooFewSamples {
            required: samples.max(1),
            got: 0,
        });
    }
    let mut points = traj.sample_evenly(duration / samples as f64)?;
    // Rounding in floor(duration / dt) can drop the final sample.
    while points.len() < samples {
        let t = traj.start_time() + points.len() as f64 * duration / samples as f64;
        points.push(traj.position_at(t.min(traj.end_time())).expect("time inside trajectory"));
    }
    points.truncate(samples);
    Ok(points)
}
