//! First-arrival times of inhomogeneous Poisson processes.
//!
//! Arrivals are drawn by inverting the integrated rate against a unit
//! exponential, either in closed form (affine envelopes) or numerically, and
//! intractable rates are handled by thinning against an affine envelope.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed before a rate is declared to exceed its bound.
pub const BOUND_SLACK: f64 = 1e-9;

/// Unit exponential draw by inversion, `-ln(1 - U)` with `U` uniform on `[0, 1)`.
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    -(-u).ln_1p()
}

/// Upper envelope `max(a + b u, 0)` on the rate of a clock, valid for `u <= horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRateBound {
    pub a: f64,
    pub b: f64,
    pub horizon: f64,
}

impl AffineRateBound {
    pub fn new(a: f64, b: f64) -> Self {
        AffineRateBound {
            a,
            b,
            horizon: f64::INFINITY,
        }
    }

    pub fn constant(rate: f64) -> Self {
        Self::new(rate, 0.0)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn at(&self, u: f64) -> f64 {
        (self.a + self.b * u).max(0.0)
    }

    /// `∫₀^u max(a + b s, 0) ds`.
    pub fn integral(&self, u: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        if b < 0.0 {
            let zero = a / -b;
            let u = u.min(zero);
            a * u + 0.5 * b * u * u
        } else {
            a * u + 0.5 * b * u * u
        }
    }

    /// Time at which the integrated envelope reaches `r`, or `+∞` if it never does.
    pub fn invert(&self, r: f64) -> Result<f64> {
        let (a, b) = (self.a, self.b);
        if a < 0.0 || a.is_nan() {
            return Err(Error::NegativeIntercept(a));
        }
        if r <= 0.0 {
            return Ok(0.0);
        }
        // Solves a τ + b τ²/2 = r through the cancellation-free form 2r / (a + √(a² + 2br)).
        // For b < 0 a negative discriminant means the envelope dies out first.
        let disc = a * a + 2.0 * b * r;
        if disc < 0.0 {
            return Ok(f64::INFINITY);
        }
        let denom = a + disc.sqrt();
        if denom <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(2.0 * r / denom)
    }
}

/// Draws the first arrival of a Poisson process with intensity `max(a + b u, 0)`.
pub fn first_arrival_affine<R: Rng + ?Sized>(bound: &AffineRateBound, rng: &mut R) -> Result<f64> {
    if bound.a < 0.0 {
        return Err(Error::NegativeIntercept(bound.a));
    }
    bound.invert(exp1(rng))
}

/// Accepts a proposed event with probability `rate / bound`.
///
/// A rate above the bound means the envelope was wrong and the run is invalid,
/// so it is reported as an error instead of being clamped.
pub fn thinning_accept<R: Rng + ?Sized>(rate: f64, bound: f64, rng: &mut R) -> Result<bool> {
    if rate > bound * (1.0 + BOUND_SLACK) || rate.is_nan() || rate < 0.0 {
        return Err(Error::BoundViolation { rate, bound });
    }
    if bound <= 0.0 || rate <= 0.0 {
        return Ok(false);
    }
    let u: f64 = rng.gen();
    Ok(u * bound < rate)
}

/// Tolerance on the arrival time returned by [`first_arrival_numeric`].
pub const NUMERIC_TIME_TOL: f64 = 1e-10;

/// Draws the first arrival for an arbitrary non-negative rate by numerically
/// inverting its integral. Returns `+∞` if the integral up to `horizon` stays
/// below the exponential draw.
pub fn first_arrival_numeric<F, R>(rate: F, horizon: f64, rng: &mut R) -> Result<f64>
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    invert_numeric(rate, horizon, exp1(rng))
}

/// Deterministic core of [`first_arrival_numeric`] for a given exponential draw `r`.
pub fn invert_numeric<F: Fn(f64) -> f64>(rate: F, horizon: f64, r: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "numeric inversion needs a finite positive horizon, got {horizon}"
        )));
    }
    let piece = |lo: f64, hi: f64| -> Result<f64> {
        let v = adaptive_simpson(&rate, lo, hi, 1e-13);
        if v < -1e-12 {
            return Err(Error::NonMonotoneIntegral { from: 0.0, to: v });
        }
        Ok(v)
    };
    let total = piece(0.0, horizon)?;
    if total < r {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (0.0, horizon);
    let mut cum_lo = 0.0;
    while hi - lo > NUMERIC_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        let inc = piece(lo, mid)?;
        let cum_mid = cum_lo + inc;
        if cum_mid < cum_lo {
            return Err(Error::NonMonotoneIntegral {
                from: cum_lo,
                to: cum_mid,
            });
        }
        if cum_mid < r {
            lo = mid;
            cum_lo = cum_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, eps, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}
