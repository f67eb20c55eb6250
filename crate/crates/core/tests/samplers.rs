use std::sync::{Arc, Mutex};

use pdmc::diagnostics::{time_average, trajectory_ess, AverageMode, Observable, Quadratic};
use pdmc::domain::Polytope;
use pdmc::error::Error;
use pdmc::event::AffineRateBound;
use pdmc::models::{generate_logistic_data, GaussianTarget, LogisticModel, TargetModel};
use pdmc::pdmp::{simulate, Dynamics, StopRule};
use pdmc::samplers::{Bps, GradientMode, Preconditioner, VelocityLaw, ZigZag};
use pdmc::subsample::{find_reference, ControlVariate};
use pdmc::trajectory::{EventKind, State, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn half_normal_mean() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

fn mean_and_se(traj: &Trajectory, coord: usize) -> (f64, f64) {
    let obs = Observable::Polynomial(Quadratic::coordinate(coord, traj.dim()));
    let mean = time_average(traj, &obs, AverageMode::Exact).unwrap();
    let se = trajectory_ess(traj, &obs, 10_000).unwrap().standard_error;
    (mean, se)
}

#[test]
fn bps_standard_gaussian_2d() {
    let g = GaussianTarget::standard(2);
    let domain = Polytope::unrestricted(2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bps = Bps::new(&g, VelocityLaw::UniformSphere, 1.0, GradientMode::Exact).unwrap();
    let v0 = bps.initial_velocity(&mut rng);
    let traj = simulate(State::new(vec![0.0, 0.0], v0), &mut bps, &domain, StopRule::MaxTime(1e4), &mut rng)
        .unwrap();
    for i in 0..2 {
        let (m, se) = mean_and_se(&traj, i);
        assert!(m.abs() < 3.0 * se, "coordinate {i}: {m} ± {se}");
    }
    assert!(traj.max_path_residual() < 1e-10);
    assert_eq!(traj.events.last().unwrap().kind, EventKind::Horizon);
}

#[test]
fn truncated_gaussian_bps_and_zigzag() {
    let g = GaussianTarget::standard(1);
    let half = Polytope::boxed(&[Some(0.0)], &[None]).unwrap();
    let target = half_normal_mean();

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut bps = Bps::new(&g, VelocityLaw::UniformSphere, 1.0, GradientMode::Exact).unwrap();
    let traj = simulate(State::new(vec![1.0], vec![1.0]), &mut bps, &half, StopRule::MaxTime(2e4), &mut rng)
        .unwrap();
    let (m, se) = mean_and_se(&traj, 0);
    assert!((m - target).abs() < 3.0 * se, "bps {m} ± {se}");
    assert!(traj.events.iter().any(|e| matches!(e.kind, EventKind::Reflect(0))));

    let mut zz = ZigZag::new(&g, GradientMode::Exact).unwrap();
    let traj = simulate(State::new(vec![1.0], vec![-1.0]), &mut zz, &half, StopRule::MaxTime(2e4), &mut rng)
        .unwrap();
    let (m, se) = mean_and_se(&traj, 0);
    assert!((m - target).abs() < 3.0 * se, "zigzag {m} ± {se}");
}

#[test]
fn reflections_point_inward_and_path_stays_inside() {
    let g = GaussianTarget::new(vec![4.0, 4.0], nalgebra::DMatrix::identity(2, 2)).unwrap();
    let simplex = Polytope::simplex(2, 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for law in [VelocityLaw::UniformSphere, VelocityLaw::GaussianIsotropic] {
        let mut bps = Bps::new(&g, law, 0.5, GradientMode::Exact).unwrap();
        let v0 = bps.initial_velocity(&mut rng);
        let traj = simulate(State::new(vec![0.5, 0.5], v0), &mut bps, &simplex, StopRule::MaxEvents(5000), &mut rng)
            .unwrap();
        let mut reflections = 0;
        for e in &traj.events {
            assert!(simplex.contains(&e.x));
            if let EventKind::Reflect(face) = e.kind {
                reflections += 1;
                let n = simplex.outward_normal(face);
                assert!(n.iter().zip(&e.v).map(|(a, b)| a * b).sum::<f64>() <= 1e-12);
            }
        }
        assert!(reflections > 100);
        for w in traj.events.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }
}

#[test]
fn zigzag_on_simplex_keeps_sign_velocities() {
    let g = GaussianTarget::new(vec![2.0, 2.0, 2.0], nalgebra::DMatrix::identity(3, 3)).unwrap();
    let simplex = Polytope::simplex(3, 4.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut zz = ZigZag::new(&g, GradientMode::Exact).unwrap();
    let v0 = zz.initial_velocity(&mut rng);
    let traj = simulate(State::new(vec![0.5; 3], v0), &mut zz, &simplex, StopRule::MaxEvents(20_000), &mut rng)
        .unwrap();
    for e in &traj.events {
        assert!(simplex.contains(&e.x));
        assert!(e.v.iter().all(|c| c.abs() == 1.0));
    }
}

/// Closed form of `∫_0^D max(a + b s, 0) ds` for `b >= 0`.
fn positive_part_integral(a: f64, b: f64, duration: f64) -> f64 {
    let start = if a >= 0.0 {
        0.0
    } else if b > 0.0 {
        (-a / b).min(duration)
    } else {
        duration
    };
    let len = duration - start;
    let a0 = a + b * start;
    a0 * len + b * len * len / 2.0
}

#[test]
fn bounce_count_matches_compensator() {
    // Number of bounces minus the integrated bounce rate along the path is a
    // martingale with variance equal to its mean.
    let g = GaussianTarget::standard(1);
    let free = Polytope::unrestricted(1);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let refresh = 0.7;
    let mut bps = Bps::new(&g, VelocityLaw::GaussianIsotropic, refresh, GradientMode::Exact).unwrap();
    let v0 = bps.initial_velocity(&mut rng);
    let horizon = 2e4;
    let traj = simulate(State::new(vec![0.0], v0), &mut bps, &free, StopRule::MaxTime(horizon), &mut rng).unwrap();
    let compensator: f64 = traj
        .segments()
        .map(|s| positive_part_integral(s.v[0] * s.x0[0], s.v[0] * s.v[0], s.duration()))
        .sum();
    let bounces = traj.events.iter().filter(|e| e.kind == EventKind::Switch(0)).count() as f64;
    let refreshes = traj.events.iter().filter(|e| e.kind == EventKind::Refresh).count() as f64;
    assert!((bounces - compensator).abs() < 3.0 * compensator.sqrt(), "{bounces} vs {compensator}");
    let expected = refresh * horizon;
    assert!((refreshes - expected).abs() < 3.0 * expected.sqrt());
    let share = bounces / (bounces + refreshes);
    let predicted = compensator / (compensator + expected);
    let sd = (predicted * (1.0 - predicted) / (bounces + refreshes)).sqrt();
    assert!((share - predicted).abs() < 3.0 * sd + 1e-3, "{share} vs {predicted}");
}

#[test]
fn preconditioned_bps_recovers_scaled_gaussian() {
    let target = GaussianTarget::diagonal(vec![0.0, 0.0], &[9.0, 1.0]).unwrap();
    let half = Polytope::boxed(&[Some(0.0), None], &[None, None]).unwrap();
    let pre = Preconditioner::new(&nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![9.0, 1.0])))
        .unwrap();
    let model = pre.model(&target).unwrap();
    let domain = pre.domain(&half).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut bps = Bps::new(&model, VelocityLaw::UniformSphere, 1.0, GradientMode::Exact).unwrap();
    let v0 = bps.initial_velocity(&mut rng);
    let y0 = pre.to_whitened(&[1.0, 0.0]);
    let traj = simulate(State::new(y0, v0), &mut bps, &domain, StopRule::MaxTime(2e4), &mut rng).unwrap();
    let traj = pre.map_back(&traj);
    let (m, se) = mean_and_se(&traj, 0);
    let expected = 3.0 * half_normal_mean();
    assert!((m - expected).abs() < 3.0 * se, "{m} ± {se} vs {expected}");
}

#[test]
fn subsampled_bps_on_logistic_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = LogisticModel::new(generate_logistic_data(500, 3, 10.0, &mut rng).unwrap());
    let domain = Polytope::simplex(3, 10.0).unwrap();
    let cv = find_reference(&model, &domain, &[1.0; 3], None).unwrap();
    let x_hat = cv.x_hat().to_vec();
    let mut bps = Bps::new(&model, VelocityLaw::UniformSphere, 1.0, GradientMode::Subsampled(cv)).unwrap();
    let v0 = bps.initial_velocity(&mut rng);
    let traj = simulate(State::new(x_hat.clone(), v0), &mut bps, &domain, StopRule::MaxTime(200.0), &mut rng)
        .unwrap();
    assert!(traj.events.iter().all(|e| domain.contains(&e.x)));
    // One datum evaluation per thinning proposal, so far fewer than N per event.
    assert!(traj.grad_evals > 0);
    assert!((traj.grad_evals as f64) < 500.0 * traj.events.len() as f64);

    let mut exact = Bps::new(&model, VelocityLaw::UniformSphere, 1.0, GradientMode::Exact).unwrap();
    let v0 = exact.initial_velocity(&mut rng);
    let reference = simulate(State::new(x_hat, v0), &mut exact, &domain, StopRule::MaxTime(200.0), &mut rng)
        .unwrap();
    let (a, sa) = mean_and_se(&traj, 0);
    let (b, sb) = mean_and_se(&reference, 0);
    assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "{a} ± {sa} vs {b} ± {sb}");
}

#[test]
fn subsampled_bps_needs_unit_speed() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let model = LogisticModel::new(generate_logistic_data(50, 2, 5.0, &mut rng).unwrap());
    let cv = ControlVariate::new(&model, vec![0.5, 0.5], model.datum_hessian_bound()).unwrap();
    assert!(matches!(
        Bps::new(&model, VelocityLaw::GaussianIsotropic, 1.0, GradientMode::Subsampled(cv)),
        Err(Error::Unsupported(_))
    ));
}

/// Delegates to a sampler and checks that the estimate used to accept an
/// event is the very allocation handed to the jump kernel.
struct Audited<D> {
    inner: D,
    last_estimate: Arc<Mutex<Option<usize>>>,
    checked: usize,
}

impl<D: Dynamics<Estimate = Vec<f64>>> Dynamics for Audited<D> {
    type Estimate = Vec<f64>;

    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn clock_count(&self) -> usize {
        self.inner.clock_count()
    }
    fn bounds(&mut self, state: &State, out: &mut [AffineRateBound]) -> pdmc::Result<()> {
        self.inner.bounds(state, out)
    }
    fn rate<R: Rng + ?Sized>(&mut self, clock: usize, state: &State, rng: &mut R) -> pdmc::Result<(f64, Vec<f64>)> {
        let (r, est) = self.inner.rate(clock, state, rng)?;
        *self.last_estimate.lock().unwrap() = Some(est.as_ptr() as usize);
        Ok((r, est))
    }
    fn jump<R: Rng + ?Sized>(
        &mut self,
        clock: usize,
        state: &State,
        estimate: Vec<f64>,
        rng: &mut R,
    ) -> (Vec<f64>, EventKind) {
        if clock == 0 {
            assert_eq!(*self.last_estimate.lock().unwrap(), Some(estimate.as_ptr() as usize));
            self.checked += 1;
        }
        self.inner.jump(clock, state, estimate, rng)
    }
    fn reflect<R: Rng + ?Sized>(&mut self, state: &State, domain: &Polytope, face: usize, rng: &mut R) -> Vec<f64> {
        self.inner.reflect(state, domain, face, rng)
    }
    fn grad_evals(&self) -> u64 {
        self.inner.grad_evals()
    }
}

#[test]
fn bounce_uses_the_accepting_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let model = LogisticModel::new(generate_logistic_data(200, 3, 10.0, &mut rng).unwrap());
    let domain = Polytope::simplex(3, 10.0).unwrap();
    let cv = find_reference(&model, &domain, &[1.0; 3], None).unwrap();
    let start = cv.x_hat().to_vec();
    let bps = Bps::new(&model, VelocityLaw::UniformSphere, 1.0, GradientMode::Subsampled(cv)).unwrap();
    let mut audited = Audited {
        inner: bps,
        last_estimate: Arc::new(Mutex::new(None)),
        checked: 0,
    };
    let v0 = VelocityLaw::UniformSphere.sample(3, &mut rng);
    simulate(State::new(start, v0), &mut audited, &domain, StopRule::MaxEvents(2000), &mut rng).unwrap();
    assert!(audited.checked > 100);
}

#[test]
fn seeded_runs_are_reproducible() {
    let g = GaussianTarget::standard(3);
    let box3 = Polytope::boxed(&[Some(-1.0); 3], &[Some(2.0); 3]).unwrap();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut zz = ZigZag::new(&g, GradientMode::Exact).unwrap();
        let v0 = zz.initial_velocity(&mut rng);
        simulate(State::new(vec![0.0; 3], v0), &mut zz, &box3, StopRule::MaxEvents(1000), &mut rng).unwrap()
    };
    assert_eq!(run(), run());
}
