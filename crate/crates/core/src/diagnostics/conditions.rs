//! Numerical checks of the stationarity conditions of a switching scheme.

use rand::Rng;

use crate::linalg::dot;
use crate::models::TargetModel;
use crate::samplers::SwitchingScheme;

/// Largest `|Σ_i λ_i(x, F_i u) − Σ_i λ_i(x, u) + u·∇U(x)|` over `trials`
/// random points, with `x` uniform in `[-radius, radius]^d` and `u` from the
/// scheme's velocity law. The kernels are deterministic involutions that
/// preserve the velocity law, so the first sum is the inflow of probability
/// into `u` from the other velocities.
pub fn check_intensity_condition<S, M, R>(
    scheme: &S,
    model: &M,
    radius: f64,
    trials: usize,
    rng: &mut R,
) -> f64
where
    S: SwitchingScheme,
    M: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    let d = model.dim();
    let mut grad = vec![0.0; d];
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..=radius)).collect();
        let u = scheme.sample_velocity(d, rng);
        model.gradient(&x, &mut grad);
        worst = worst.max(intensity_residual(scheme, &grad, &u).abs());
    }
    worst
}

/// The residual at a single point.
pub fn intensity_residual<S: SwitchingScheme>(scheme: &S, grad: &[f64], u: &[f64]) -> f64 {
    let mut residual = dot(u, grad);
    for i in 0..scheme.clock_count(u.len()) {
        let image = scheme.kernel(i, grad, u);
        residual += scheme.rate(i, grad, &image) - scheme.rate(i, grad, u);
    }
    residual
}

/// Wraps a scheme and adds `extra` to every rate that is already positive.
/// Used as a negative control for the checks in this module.
#[derive(Debug, Clone, Copy)]
pub struct InflatedRates<S> {
    pub inner: S,
    pub extra: f64,
}

impl<S: SwitchingScheme> SwitchingScheme for InflatedRates<S> {
    fn clock_count(&self, dim: usize) -> usize {
        self.inner.clock_count(dim)
    }

    fn rate(&self, clock: usize, grad: &[f64], v: &[f64]) -> f64 {
        let r = self.inner.rate(clock, grad, v);
        if r > 0.0 {
            r + self.extra
        } else {
            r
        }
    }

    fn kernel(&self, clock: usize, grad: &[f64], v: &[f64]) -> Vec<f64> {
        self.inner.kernel(clock, grad, v)
    }

    fn sample_velocity<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        self.inner.sample_velocity(dim, rng)
    }
}

/// A test function `f(x, v)` for the generator check.
pub struct TestFunction<'a> {
    pub name: &'a str,
    pub f: &'a dyn Fn(&[f64], &[f64]) -> f64,
}

/// Tensor-product grid over a box of positions. `resolution` is the number
/// of Simpson intervals per axis and is rounded up to an even number.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: usize,
}

impl QuadratureGrid {
    fn nodes(&self, axis: usize) -> Vec<(f64, f64)> {
        let m = self.resolution.max(2).div_ceil(2) * 2;
        let (a, b) = (self.lower[axis], self.upper[axis]);
        let h = (b - a) / m as f64;
        (0..=m)
            .map(|k| {
                let w = if k == 0 || k == m {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                (a + k as f64 * h, w * h / 3.0)
            })
            .collect()
    }

    fn points(&self) -> Vec<(Vec<f64>, f64)> {
        let d = self.lower.len();
        let axes: Vec<Vec<(f64, f64)>> = (0..d).map(|i| self.nodes(i)).collect();
        let mut out = vec![(Vec::with_capacity(d), 1.0)];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for (x, w) in &out {
                for (xi, wi) in axis {
                    let mut y = x.clone();
                    y.push(*xi);
                    next.push((y, w * wi));
                }
            }
            out = next;
        }
        out
    }
}

/// `E_{π⊗ρ}[ℒf]` for each test function, where
/// `ℒf(x, v) = v·∇_x f(x, v) + Σ_i λ_i(x, v) (f(x, F_i v) − f(x, v))`.
///
/// `π ∝ exp(−U)` is normalised on the grid, which should cover the domain
/// (or enough of it that the neglected mass is negligible). `velocities`
/// lists the support of `ρ` with weights summing to one. The position
/// gradient of `f` is taken by central differences.
pub fn check_generator_zero<S, M>(
    scheme: &S,
    model: &M,
    grid: &QuadratureGrid,
    velocities: &[(Vec<f64>, f64)],
    tests: &[TestFunction<'_>],
) -> Vec<f64>
where
    S: SwitchingScheme,
    M: TargetModel + ?Sized,
{
    const H: f64 = 1e-5;
    let d = model.dim();
    let points = grid.points();
    let shift = points
        .iter()
        .map(|(x, _)| model.potential(x))
        .fold(f64::INFINITY, f64::min);
    let mut mass = 0.0;
    let mut totals = vec![0.0; tests.len()];
    let mut grad = vec![0.0; d];
    for (x, w) in &points {
        let density = (shift - model.potential(x)).exp() * w;
        mass += density;
        if density == 0.0 {
            continue;
        }
        model.gradient(x, &mut grad);
        for (v, rho) in velocities {
            let clocks = scheme.clock_count(d);
            for (k, test) in tests.iter().enumerate() {
                let f = test.f;
                let fx = f(x, v);
                let mut drift = 0.0;
                let mut y = x.clone();
                for j in 0..d {
                    y[j] = x[j] + H;
                    let up = f(&y, v);
                    y[j] = x[j] - H;
                    let down = f(&y, v);
                    y[j] = x[j];
                    drift += v[j] * (up - down) / (2.0 * H);
                }
                let mut jump = 0.0;
                for i in 0..clocks {
                    let rate = scheme.rate(i, &grad, v);
                    if rate > 0.0 {
                        jump += rate * (f(x, &scheme.kernel(i, &grad, v)) - fx);
                    }
                }
                totals[k] += density * rho * (drift + jump);
            }
        }
    }
    totals.iter().map(|t| t / mass).collect()
}
