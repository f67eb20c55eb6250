//! Control-variate gradient estimates from a single datum, with envelopes
//! that hold for every possible datum.
//!
//! With a reference point `x̂` and its full gradient precomputed,
//!
//! ```text
//! ĝ(x) = ∇U(x̂) + N [∇U_I(x) − ∇U_I(x̂)],   I ~ Uniform{1..N}
//! ```
//!
//! is unbiased for `∇U(x)`. If every per-datum Hessian is bounded by `L`
//! in spectral norm, then for a unit velocity the bouncy rate along the ray
//! satisfies `max(0, ĝ(x + u v)·v) <= max(0, ∇U(x̂)·v) + N L ‖x − x̂‖ + N L u`.

use rand::Rng;

use crate::domain::Polytope;
use crate::error::{Error, Result};
use crate::event::AffineRateBound;
use crate::linalg::{distance, dot, norm};
use crate::models::TargetModel;

/// Interior margin kept between the reference point and every face.
pub const REFERENCE_MARGIN: f64 = 1e-6;

/// Iteration cap of the projected gradient descent in [`find_reference`].
pub const DESCENT_ITERATIONS: usize = 200;

#[derive(Debug, Clone)]
pub struct ControlVariate {
    x_hat: Vec<f64>,
    grad_at_hat: Vec<f64>,
    lipschitz: f64,
    n: usize,
    /// `∇U_i(x̂)` for every datum, row by row, when cached.
    hat_terms: Option<Vec<f64>>,
    preprocessing_grad_evals: u64,
}

impl ControlVariate {
    /// Builds the estimator around `x_hat`, caching every per-datum gradient
    /// there so that each estimate costs one datum evaluation.
    pub fn new<M: TargetModel + ?Sized>(model: &M, x_hat: Vec<f64>, lipschitz: f64) -> Result<Self> {
        Self::build(model, x_hat, lipschitz, true)
    }

    /// Like [`ControlVariate::new`] but recomputes `∇U_I(x̂)` on every estimate
    /// (two datum evaluations each) instead of storing `N × d` values.
    pub fn new_uncached<M: TargetModel + ?Sized>(
        model: &M,
        x_hat: Vec<f64>,
        lipschitz: f64,
    ) -> Result<Self> {
        Self::build(model, x_hat, lipschitz, false)
    }

    fn build<M: TargetModel + ?Sized>(
        model: &M,
        x_hat: Vec<f64>,
        lipschitz: f64,
        cache: bool,
    ) -> Result<Self> {
        let d = model.dim();
        if x_hat.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x_hat.len(),
            });
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Hessian bound L must be finite and non-negative, got {lipschitz}"
            )));
        }
        let n = model.num_data();
        if n == 0 {
            return Err(Error::InvalidArgument("model has no data terms".into()));
        }
        let mut grad_at_hat = vec![0.0; d];
        let mut terms = if cache { Vec::with_capacity(n * d) } else { Vec::new() };
        let mut g = vec![0.0; d];
        for i in 0..n {
            model.datum_gradient(i, &x_hat, &mut g);
            grad_at_hat.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi);
            if cache {
                terms.extend_from_slice(&g);
            }
        }
        if grad_at_hat.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinitePotential(0));
        }
        Ok(ControlVariate {
            x_hat,
            grad_at_hat,
            lipschitz,
            n,
            hat_terms: cache.then_some(terms),
            preprocessing_grad_evals: n as u64,
        })
    }

    pub fn x_hat(&self) -> &[f64] {
        &self.x_hat
    }

    pub fn grad_at_hat(&self) -> &[f64] {
        &self.grad_at_hat
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn num_data(&self) -> usize {
        self.n
    }

    /// Datum evaluations spent finding `x̂` and its gradient.
    pub fn preprocessing_grad_evals(&self) -> u64 {
        self.preprocessing_grad_evals
    }

    /// Datum evaluations charged per call to [`ControlVariate::estimate_grad`].
    pub fn evals_per_estimate(&self) -> u64 {
        if self.hat_terms.is_some() {
            1
        } else {
            2
        }
    }

    /// Largest deviation between the stored `∇U(x̂)` and a fresh full gradient.
    pub fn verify<M: TargetModel + ?Sized>(&self, model: &M) -> f64 {
        let fresh = model.gradient_vec(&self.x_hat);
        fresh
            .iter()
            .zip(&self.grad_at_hat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// The estimate for a given datum index `i` (zero-based).
    pub fn estimate_with_index<M: TargetModel + ?Sized>(
        &self,
        model: &M,
        x: &[f64],
        i: usize,
        out: &mut [f64],
    ) {
        let d = self.x_hat.len();
        model.datum_gradient(i, x, out);
        let scale = self.n as f64;
        match &self.hat_terms {
            Some(terms) => {
                let hat = &terms[i * d..(i + 1) * d];
                for j in 0..d {
                    out[j] = self.grad_at_hat[j] + scale * (out[j] - hat[j]);
                }
            }
            None => {
                let mut hat = vec![0.0; d];
                model.datum_gradient(i, &self.x_hat, &mut hat);
                for j in 0..d {
                    out[j] = self.grad_at_hat[j] + scale * (out[j] - hat[j]);
                }
            }
        }
    }

    /// Unbiased single-datum gradient estimate at `x`; returns the datum used.
    pub fn estimate_grad<M, R>(&self, model: &M, x: &[f64], rng: &mut R, out: &mut [f64]) -> usize
    where
        M: TargetModel + ?Sized,
        R: Rng + ?Sized,
    {
        let i = rng.gen_range(0..self.n);
        self.estimate_with_index(model, x, i, out);
        i
    }

    /// Envelope on `max(0, ĝ(x + u v)·v)` valid for every datum; `v` must be a unit vector.
    pub fn affine_bound_bps(&self, x: &[f64], v: &[f64]) -> Result<AffineRateBound> {
        let speed = norm(v);
        if (speed - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitVelocity(speed));
        }
        let nl = self.n as f64 * self.lipschitz;
        let a = dot(&self.grad_at_hat, v).max(0.0) + nl * distance(x, &self.x_hat);
        Ok(AffineRateBound::new(a, nl))
    }

    /// Envelope on `max(0, v_i ĝ_i(x + u v))` for a velocity in `{-1, +1}^d`.
    pub fn affine_bound_zigzag(&self, x: &[f64], v: &[f64], i: usize) -> AffineRateBound {
        let nl = self.n as f64 * self.lipschitz;
        let speed = (v.len() as f64).sqrt();
        let a = (v[i] * self.grad_at_hat[i]).max(0.0) + nl * distance(x, &self.x_hat);
        AffineRateBound::new(a, nl * speed)
    }
}

/// Projected gradient descent towards the mode of `U` on `domain`.
///
/// Steps start at `1 / hessian_bound` and are halved until the usual
/// sufficient-decrease test for projected steps passes. Iterates stay
/// [`REFERENCE_MARGIN`] inside every face. Returns the final point and the
/// number of datum evaluations spent.
pub fn descend_to_mode<M: TargetModel + ?Sized>(
    model: &M,
    domain: &Polytope,
    start: &[f64],
) -> Result<(Vec<f64>, u64)> {
    let d = model.dim();
    if start.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: start.len(),
        });
    }
    let n = model.num_data() as u64;
    let mut evals = 0u64;
    let mut x = domain.project(start, REFERENCE_MARGIN);
    let mut grad = vec![0.0; d];
    let mut u = model.potential_and_gradient(&x, &mut grad);
    evals += n;
    let lambda = model.hessian_bound();
    let mut step = if lambda > 0.0 { 1.0 / lambda } else { 1.0 };

    for iter in 0..DESCENT_ITERATIONS {
        if !u.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinitePotential(iter));
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
            let candidate = domain.project(&trial, REFERENCE_MARGIN);
            let u_new = model.potential(&candidate);
            evals += n;
            let moved: Vec<f64> = candidate.iter().zip(&x).map(|(a, b)| a - b).collect();
            let model_decrease = dot(&grad, &moved) + dot(&moved, &moved) / (2.0 * step);
            if u_new.is_finite() && u_new <= u + model_decrease + 1e-12 * (1.0 + u.abs()) {
                accepted = Some((candidate, u_new, dot(&moved, &moved).sqrt()));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, _, moved)) = accepted else {
            break;
        };
        x = candidate;
        u = model.potential_and_gradient(&x, &mut grad);
        evals += n;
        if moved <= 1e-12 * (1.0 + norm(&x)) {
            break;
        }
    }
    if !u.is_finite() {
        return Err(Error::NonFinitePotential(DESCENT_ITERATIONS));
    }
    Ok((x, evals))
}

/// Finds a reference point near the mode and builds the estimator there.
/// `lipschitz` defaults to the model's per-datum Hessian bound.
pub fn find_reference<M: TargetModel + ?Sized>(
    model: &M,
    domain: &Polytope,
    start: &[f64],
    lipschitz: Option<f64>,
) -> Result<ControlVariate> {
    let (x_hat, evals) = descend_to_mode(model, domain, start)?;
    let mut cv = ControlVariate::new(model, x_hat, lipschitz.unwrap_or_else(|| model.datum_hessian_bound()))?;
    cv.preprocessing_grad_evals += evals;
    Ok(cv)
}

/// Outcome of [`dominance_sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `rate / bound` seen, above 1 exactly when something was violated.
    pub worst_ratio: f64,
}

/// Brute-force check that [`ControlVariate::affine_bound_bps`] dominates the
/// subsampled bouncy rate.
///
/// Half of the trials draw `x` uniformly within `radius` of `x̂` per
/// coordinate, a uniform unit `v`, `u` in `[0, 5]` and a uniform datum. The
/// other half start at `x̂` and move along an approximate top eigenvector of
/// the datum Hessian there (two power iterations on gradient differences),
/// oriented uphill, which is where a too-small Hessian bound shows first.
pub fn dominance_sweep<M, R>(
    cv: &ControlVariate,
    model: &M,
    radius: f64,
    trials: usize,
    rng: &mut R,
) -> Result<SweepReport>
where
    M: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    let d = cv.x_hat.len();
    let mut est = vec![0.0; d];
    let mut report = SweepReport {
        trials,
        violations: 0,
        worst_ratio: 0.0,
    };
    for trial in 0..trials {
        let i = rng.gen_range(0..cv.n);
        let (x, v, u) = if trial % 2 == 0 {
            let x: Vec<f64> = cv.x_hat.iter().map(|c| c + rng.gen_range(-radius..=radius)).collect();
            (x, unit_direction(d, rng), rng.gen_range(0.0..=5.0))
        } else {
            let mut v = unit_direction(d, rng);
            for _ in 0..2 {
                let w = hessian_action(cv, model, i, &v);
                let len = norm(&w);
                if len > 0.0 {
                    v = w.iter().map(|c| c / len).collect();
                }
            }
            if dot(&cv.grad_at_hat, &v) < 0.0 {
                v.iter_mut().for_each(|c| *c = -*c);
            }
            (cv.x_hat.clone(), v, rng.gen_range(0.0..=0.5))
        };
        let bound = cv.affine_bound_bps(&x, &v)?;
        let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + u * b).collect();
        cv.estimate_with_index(model, &y, i, &mut est);
        let rate = dot(&est, &v).max(0.0);
        let cap = bound.at(u);
        if rate > cap * (1.0 + crate::event::BOUND_SLACK) {
            report.violations += 1;
        }
        if cap > 0.0 {
            report.worst_ratio = report.worst_ratio.max(rate / cap);
        } else if rate > 0.0 {
            report.worst_ratio = f64::INFINITY;
        }
    }
    Ok(report)
}

fn unit_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    crate::samplers::VelocityLaw::UniformSphere.sample(d, rng)
}

/// Finite-difference estimate of `∇²U_i(x̂) w`.
fn hessian_action<M: TargetModel + ?Sized>(cv: &ControlVariate, model: &M, i: usize, w: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let d = w.len();
    let plus: Vec<f64> = cv.x_hat.iter().zip(w).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = cv.x_hat.iter().zip(w).map(|(a, b)| a - h * b).collect();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    model.datum_gradient(i, &plus, &mut gp);
    model.datum_gradient(i, &minus, &mut gm);
    gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{generate_logistic_data, GaussianTarget, LogisticModel};
    use crate::samplers::VelocityLaw;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logistic(n: usize, p: usize, seed: u64) -> LogisticModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LogisticModel::new(generate_logistic_data(n, p, 10.0, &mut rng).unwrap())
    }

    #[test]
    fn estimate_is_exact_at_reference() {
        let m = logistic(100, 3, 1);
        let cv = ControlVariate::new(&m, vec![0.5, 0.5, 0.5], m.datum_hessian_bound()).unwrap();
        let mut out = vec![0.0; 3];
        for i in 0..100 {
            cv.estimate_with_index(&m, &[0.5, 0.5, 0.5], i, &mut out);
            assert_eq!(out, cv.grad_at_hat());
        }
    }

    #[test]
    fn single_datum_estimate_is_exact() {
        let m = logistic(1, 3, 2);
        let cv = ControlVariate::new(&m, vec![0.1, 0.2, 0.3], 1.0).unwrap();
        let x = [1.0, -0.5, 2.0];
        let mut est = vec![0.0; 3];
        cv.estimate_with_index(&m, &x, 0, &mut est);
        let exact = m.gradient_vec(&x);
        for (a, b) in est.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn average_over_all_indices_is_full_gradient() {
        let m = logistic(200, 4, 3);
        for cv in [
            ControlVariate::new(&m, vec![1.0; 4], 1.0).unwrap(),
            ControlVariate::new_uncached(&m, vec![1.0; 4], 1.0).unwrap(),
        ] {
            let x = [0.3, 2.0, -1.0, 0.7];
            let mut avg = [0.0; 4];
            let mut est = vec![0.0; 4];
            for i in 0..200 {
                cv.estimate_with_index(&m, &x, i, &mut est);
                avg.iter_mut().zip(&est).for_each(|(s, e)| *s += e / 200.0);
            }
            let exact = m.gradient_vec(&x);
            for (a, b) in avg.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn envelope_examples() {
        // N = 100 unit-gradient terms, L = 0.25, |x - x̂| = 2, ∇U(x̂)·v = 1.
        struct Flat;
        impl TargetModel for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn num_data(&self) -> usize {
                100
            }
            fn potential(&self, x: &[f64]) -> f64 {
                x[0]
            }
            fn gradient(&self, _: &[f64], out: &mut [f64]) {
                out.copy_from_slice(&[1.0, 0.0]);
            }
            fn datum_gradient(&self, _: usize, _: &[f64], out: &mut [f64]) {
                out.copy_from_slice(&[0.01, 0.0]);
            }
            fn hessian_bound(&self) -> f64 {
                0.0
            }
        }
        let cv = ControlVariate::new(&Flat, vec![0.0, 0.0], 0.25).unwrap();
        let b = cv.affine_bound_bps(&[0.0, 2.0], &[1.0, 0.0]).unwrap();
        assert!((b.a - 51.0).abs() < 1e-12 && (b.b - 25.0).abs() < 1e-12);

        let b = cv.affine_bound_bps(&[0.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert_eq!((b.a, b.b), (0.0, 25.0));

        assert!(matches!(
            cv.affine_bound_bps(&[0.0, 0.0], &[2.0, 0.0]),
            Err(Error::NonUnitVelocity(_))
        ));
    }

    #[test]
    fn envelope_dominates_every_datum() {
        let m = logistic(300, 4, 4);
        let cv = ControlVariate::new(&m, vec![0.8, 0.4, 1.2, 0.3], m.datum_hessian_bound()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut est = vec![0.0; 4];
        let mut violations = 0;
        for _ in 0..10_000 {
            let x: Vec<f64> = cv.x_hat().iter().map(|c| c + rng.gen_range(-1.0..1.0)).collect();
            let v = VelocityLaw::UniformSphere.sample(4, &mut rng);
            let u = rng.gen_range(0.0..5.0);
            let i = rng.gen_range(0..m.num_data());
            let bound = cv.affine_bound_bps(&x, &v).unwrap();
            let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + u * b).collect();
            cv.estimate_with_index(&m, &y, i, &mut est);
            if dot(&est, &v).max(0.0) > bound.at(u) {
                violations += 1;
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn sweep_catches_halved_bound() {
        let m = logistic(1000, 5, 6);
        let simplex = Polytope::simplex(5, 10.0).unwrap();
        let cv = find_reference(&m, &simplex, &[1.0; 5], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let ok = dominance_sweep(&cv, &m, 1.0, 10_000, &mut rng).unwrap();
        assert_eq!(ok.violations, 0);
        assert!(ok.worst_ratio <= 1.0);

        let halved = ControlVariate::new(&m, cv.x_hat().to_vec(), 0.5 * cv.lipschitz()).unwrap();
        let bad = dominance_sweep(&halved, &m, 1.0, 10_000, &mut rng).unwrap();
        assert!(bad.violations > 0);
    }

    #[test]
    fn reference_for_interior_mode() {
        let g = GaussianTarget::new(vec![3.0], nalgebra::DMatrix::identity(1, 1)).unwrap();
        let half = Polytope::boxed(&[Some(0.0)], &[None]).unwrap();
        let cv = find_reference(&g, &half, &[1.0], None).unwrap();
        assert!((cv.x_hat()[0] - 3.0).abs() < 1e-6);
        assert!(cv.verify(&g) <= 1e-10);
    }

    #[test]
    fn reference_for_mode_outside_domain() {
        let g = GaussianTarget::new(vec![-1.0], nalgebra::DMatrix::identity(1, 1)).unwrap();
        let half = Polytope::boxed(&[Some(0.0)], &[None]).unwrap();
        let cv = find_reference(&g, &half, &[1.0], None).unwrap();
        assert!((cv.x_hat()[0] - REFERENCE_MARGIN).abs() < 1e-12);
        assert!(half.strictly_contains(cv.x_hat()));
    }

    #[test]
    fn reference_for_logistic_on_simplex() {
        let m = logistic(500, 5, 5);
        let simplex = Polytope::simplex(5, 10.0).unwrap();
        let cv = find_reference(&m, &simplex, &[1.0; 5], None).unwrap();
        assert!(simplex.strictly_contains(cv.x_hat()));
        assert!(cv.verify(&m) <= 1e-10);
        // Projected-gradient stationarity: a further step barely moves.
        let g = m.gradient_vec(cv.x_hat());
        let trial: Vec<f64> = cv
            .x_hat()
            .iter()
            .zip(&g)
            .map(|(x, gi)| x - gi / m.hessian_bound())
            .collect();
        let next = simplex.project(&trial, REFERENCE_MARGIN);
        assert!(distance(&next, cv.x_hat()) < 1e-3);
        assert!(cv.preprocessing_grad_evals() >= 500);
    }
}
