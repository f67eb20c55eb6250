//! The generic event loop shared by every piecewise deterministic sampler.
//!
//! Each excursion starts from the current state: the dynamics supply one
//! affine envelope per clock, a first arrival is drawn for each, and the
//! earliest is raced against the time to the boundary. Boundary hits are
//! always taken; clock proposals are thinned. A rejected proposal moves the
//! particle without changing its velocity, and the next excursion rebuilds
//! the envelopes from there. Rejections are not recorded since they leave
//! the path unchanged.

use rand::Rng;

use crate::domain::Polytope;
use crate::error::{Error, Result};
use crate::event::{first_arrival_affine, thinning_accept, AffineRateBound};
use crate::trajectory::{EventKind, EventRecord, State, Trajectory};

/// A boundary hit within this much of the clock proposal is taken first.
pub const BOUNDARY_TIE_TOL: f64 = 1e-12;

/// Boundary hits closer than this are treated as instantaneous.
pub const ZERO_TIME: f64 = 1e-12;

pub const DEFAULT_BOUNDARY_RETRIES: usize = 100;

/// Rates, envelopes and jump kernels of a concrete sampler.
///
/// `rate` returns the value used for the accept/reject test together with
/// whatever it was computed from (for example a subsampled gradient). On
/// acceptance that same object is handed to `jump`, so the velocity update
/// uses exactly the estimate that decided the event.
pub trait Dynamics {
    type Estimate;

    fn name(&self) -> &'static str;

    fn clock_count(&self) -> usize;

    /// Envelopes `λ̄_i(u) >= λ_i(x + u v, v)` valid from the current state.
    fn bounds(&mut self, state: &State, out: &mut [AffineRateBound]) -> Result<()>;

    fn rate<R: Rng + ?Sized>(
        &mut self,
        clock: usize,
        state: &State,
        rng: &mut R,
    ) -> Result<(f64, Self::Estimate)>;

    /// Velocity after an accepted event of `clock`.
    fn jump<R: Rng + ?Sized>(
        &mut self,
        clock: usize,
        state: &State,
        estimate: Self::Estimate,
        rng: &mut R,
    ) -> (Vec<f64>, EventKind);

    /// Velocity after hitting `face` of `domain`.
    fn reflect<R: Rng + ?Sized>(
        &mut self,
        state: &State,
        domain: &Polytope,
        face: usize,
        rng: &mut R,
    ) -> Vec<f64>;

    /// Per-datum gradient evaluations so far.
    fn grad_evals(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop after this many recorded events (switches, reflections, refreshes).
    MaxEvents(usize),
    /// Stop at this time; a final horizon record closes the path.
    MaxTime(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Consecutive zero-time boundary events tolerated before giving up.
    pub boundary_retries: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            boundary_retries: DEFAULT_BOUNDARY_RETRIES,
        }
    }
}

pub fn simulate<D, R>(
    initial: State,
    dynamics: &mut D,
    domain: &Polytope,
    stop: StopRule,
    rng: &mut R,
) -> Result<Trajectory>
where
    D: Dynamics,
    R: Rng + ?Sized,
{
    simulate_with(initial, dynamics, domain, stop, SimOptions::default(), rng)
}

pub fn simulate_with<D, R>(
    initial: State,
    dynamics: &mut D,
    domain: &Polytope,
    stop: StopRule,
    options: SimOptions,
    rng: &mut R,
) -> Result<Trajectory>
where
    D: Dynamics,
    R: Rng + ?Sized,
{
    if initial.x.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: initial.x.len(),
        });
    }
    if let Some((constraint, excess)) = domain.first_violation(&initial.x) {
        return Err(Error::InvalidStart { constraint, excess });
    }
    if let StopRule::MaxTime(t_end) = stop {
        if !(t_end >= initial.t) {
            return Err(Error::InvalidArgument(format!(
                "horizon {t_end} precedes the start time {}",
                initial.t
            )));
        }
    }

    let mut state = initial.clone();
    let mut traj = Trajectory::new(initial);
    let mut bounds = vec![AffineRateBound::zero(); dynamics.clock_count()];
    let mut recorded = 0usize;

    loop {
        if let StopRule::MaxEvents(n) = stop {
            if recorded >= n {
                break;
            }
        }

        dynamics.bounds(&state, &mut bounds)?;
        let mut proposal = f64::INFINITY;
        let mut clock = None;
        for (i, bound) in bounds.iter().enumerate() {
            let tau = first_arrival_affine(bound, rng)?;
            if tau < proposal {
                proposal = tau;
                clock = Some(i);
            }
        }
        let hit = domain.hit_time_unchecked(&state.x, &state.v);
        let next = proposal.min(hit.tau_b);

        if let StopRule::MaxTime(t_end) = stop {
            if state.t + next >= t_end {
                let dt = t_end - state.t;
                state.advance_in_place(dt);
                state.t = t_end;
                if traj.events.last().map_or(true, |e| e.t < t_end) {
                    traj.events.push(record(&state, EventKind::Horizon));
                }
                break;
            }
        }
        if !next.is_finite() {
            // Nothing will ever happen again; the event budget cannot be met.
            break;
        }

        if let (Some(face), true) = (hit.face, hit.tau_b <= proposal + BOUNDARY_TIE_TOL) {
            let instantaneous = hit.tau_b <= ZERO_TIME;
            if !instantaneous {
                state.advance_in_place(hit.tau_b);
            }
            state.v = dynamics.reflect(&state, domain, face, rng);
            let mut kind = EventKind::Reflect(face);
            // Corners, or kernels that may point outward, can leave the
            // particle facing another face at distance zero.
            let mut retries = 0usize;
            loop {
                let again = domain.hit_time_unchecked(&state.x, &state.v);
                match again.face {
                    Some(next_face) if again.tau_b <= ZERO_TIME => {
                        retries += 1;
                        if retries > options.boundary_retries {
                            return Err(Error::StuckAtBoundary {
                                time: state.t,
                                retries,
                            });
                        }
                        state.v = dynamics.reflect(&state, domain, next_face, rng);
                        kind = EventKind::Reflect(next_face);
                    }
                    _ => break,
                }
            }
            match traj.events.last_mut() {
                Some(last) if last.t == state.t => {
                    last.v.clone_from(&state.v);
                    last.kind = kind;
                }
                _ => {
                    traj.events.push(record(&state, kind));
                    recorded += 1;
                }
            }
            continue;
        }

        let i = clock.expect("finite proposal has a clock");
        let bound = bounds[i];
        if proposal > bound.horizon {
            state.advance_in_place(bound.horizon);
            continue;
        }
        state.advance_in_place(proposal);
        let (rate, estimate) = dynamics.rate(i, &state, rng)?;
        if !rate.is_finite() {
            return Err(Error::NonFiniteRate {
                clock: i,
                value: rate,
            });
        }
        if thinning_accept(rate, bound.at(proposal), rng)? {
            let (v, kind) = dynamics.jump(i, &state, estimate, rng);
            state.v = v;
            traj.events.push(record(&state, kind));
            recorded += 1;
        }
    }

    traj.grad_evals = dynamics.grad_evals();
    Ok(traj)
}

fn record(state: &State, kind: EventKind) -> EventRecord {
    EventRecord {
        t: state.t,
        x: state.x.clone(),
        v: state.v.clone(),
        kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::specular_reflect;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Constant-rate clocks with specular boundaries.
    struct ConstantRate {
        rate: f64,
    }

    impl Dynamics for ConstantRate {
        type Estimate = ();
        fn name(&self) -> &'static str {
            "constant"
        }
        fn clock_count(&self) -> usize {
            1
        }
        fn bounds(&mut self, _: &State, out: &mut [AffineRateBound]) -> Result<()> {
            out[0] = AffineRateBound::constant(self.rate);
            Ok(())
        }
        fn rate<R: Rng + ?Sized>(&mut self, _: usize, _: &State, _: &mut R) -> Result<(f64, ())> {
            Ok((self.rate, ()))
        }
        fn jump<R: Rng + ?Sized>(
            &mut self,
            _: usize,
            s: &State,
            _: (),
            _: &mut R,
        ) -> (Vec<f64>, EventKind) {
            (s.v.iter().map(|v| -v).collect(), EventKind::Switch(0))
        }
        fn reflect<R: Rng + ?Sized>(
            &mut self,
            s: &State,
            domain: &Polytope,
            face: usize,
            _: &mut R,
        ) -> Vec<f64> {
            specular_reflect(&s.v, &domain.outward_normal(face))
        }
        fn grad_evals(&self) -> u64 {
            0
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn zero_rate_receding_ray_only_reaches_horizon() {
        let half = Polytope::boxed(&[Some(0.0)], &[None]).unwrap();
        let traj = simulate(
            State::new(vec![1.0], vec![1.0]),
            &mut ConstantRate { rate: 0.0 },
            &half,
            StopRule::MaxTime(5.0),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(traj.events.len(), 1);
        assert_eq!(traj.events[0].kind, EventKind::Horizon);
        assert_eq!(traj.events[0].x, vec![6.0]);
    }

    #[test]
    fn billiard_in_unit_interval() {
        let unit = Polytope::boxed(&[Some(0.0)], &[Some(1.0)]).unwrap();
        let traj = simulate(
            State::new(vec![0.5], vec![1.0]),
            &mut ConstantRate { rate: 0.0 },
            &unit,
            StopRule::MaxEvents(3),
            &mut rng(),
        )
        .unwrap();
        let times: Vec<f64> = traj.events.iter().map(|e| e.t).collect();
        assert_eq!(times, vec![0.5, 1.5, 2.5]);
        assert_eq!(traj.events[0].x, vec![1.0]);
        assert_eq!(traj.events[0].v, vec![-1.0]);
        assert_eq!(traj.events[1].x, vec![0.0]);
        assert_eq!(traj.events[1].v, vec![1.0]);
        assert!(traj.events.iter().all(|e| matches!(e.kind, EventKind::Reflect(_))));
    }

    #[test]
    fn billiard_path_length_equals_elapsed_time() {
        let square = Polytope::boxed(&[Some(0.0), Some(0.0)], &[Some(1.0), Some(2.0)]).unwrap();
        let v = vec![0.6, 0.8];
        let traj = simulate(
            State::new(vec![0.3, 0.4], v),
            &mut ConstantRate { rate: 0.0 },
            &square,
            StopRule::MaxTime(50.0),
            &mut rng(),
        )
        .unwrap();
        let length: f64 = traj
            .segments()
            .map(|s| s.duration() * crate::linalg::norm(s.v))
            .sum();
        assert!((length - 50.0).abs() < 1e-10);
        assert!(traj.max_path_residual() < 1e-10);
        for e in &traj.events {
            assert!(square.contains(&e.x));
            if let EventKind::Reflect(face) = e.kind {
                let n = square.outward_normal(face);
                assert!(crate::linalg::dot(&e.v, &n) <= 0.0);
            }
        }
    }

    #[test]
    fn corner_hit_reflects_against_both_faces() {
        let square = Polytope::boxed(&[Some(0.0), Some(0.0)], &[Some(1.0), Some(1.0)]).unwrap();
        let traj = simulate(
            State::new(vec![0.5, 0.5], vec![1.0, 1.0]),
            &mut ConstantRate { rate: 0.0 },
            &square,
            StopRule::MaxEvents(1),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(traj.events.len(), 1);
        assert_eq!(traj.events[0].t, 0.5);
        assert_eq!(traj.events[0].v, vec![-1.0, -1.0]);
    }

    #[test]
    fn times_strictly_increase_with_switches() {
        let unit = Polytope::boxed(&[Some(0.0)], &[Some(1.0)]).unwrap();
        let traj = simulate(
            State::new(vec![0.5], vec![1.0]),
            &mut ConstantRate { rate: 3.0 },
            &unit,
            StopRule::MaxTime(100.0),
            &mut rng(),
        )
        .unwrap();
        assert!(traj.events.windows(2).all(|w| w[1].t > w[0].t));
        assert!(traj.events.iter().any(|e| e.kind == EventKind::Switch(0)));
        assert_eq!(traj.end_time(), 100.0);
        assert!(traj.max_path_residual() < 1e-10);
    }

    #[test]
    fn invalid_start_is_rejected() {
        let unit = Polytope::boxed(&[Some(0.0)], &[Some(1.0)]).unwrap();
        let err = simulate(
            State::new(vec![1.5], vec![1.0]),
            &mut ConstantRate { rate: 0.0 },
            &unit,
            StopRule::MaxEvents(1),
            &mut rng(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidStart { constraint: 1, .. }));
    }

    /// Reflection kernel that always points back out of the domain.
    struct Outward;

    impl Dynamics for Outward {
        type Estimate = ();
        fn name(&self) -> &'static str {
            "outward"
        }
        fn clock_count(&self) -> usize {
            0
        }
        fn bounds(&mut self, _: &State, _: &mut [AffineRateBound]) -> Result<()> {
            Ok(())
        }
        fn rate<R: Rng + ?Sized>(&mut self, _: usize, _: &State, _: &mut R) -> Result<(f64, ())> {
            unreachable!()
        }
        fn jump<R: Rng + ?Sized>(
            &mut self,
            _: usize,
            _: &State,
            _: (),
            _: &mut R,
        ) -> (Vec<f64>, EventKind) {
            unreachable!()
        }
        fn reflect<R: Rng + ?Sized>(
            &mut self,
            s: &State,
            _: &Polytope,
            _: usize,
            _: &mut R,
        ) -> Vec<f64> {
            s.v.clone()
        }
        fn grad_evals(&self) -> u64 {
            0
        }
    }

    #[test]
    fn outward_kernel_gets_stuck() {
        let unit = Polytope::boxed(&[Some(0.0)], &[Some(1.0)]).unwrap();
        let err = simulate(
            State::new(vec![0.5], vec![1.0]),
            &mut Outward,
            &unit,
            StopRule::MaxEvents(10),
            &mut rng(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::StuckAtBoundary { retries: 101, .. }));
    }

    /// Rates that lie above their envelope must abort the run.
    struct Lying;

    impl Dynamics for Lying {
        type Estimate = ();
        fn name(&self) -> &'static str {
            "lying"
        }
        fn clock_count(&self) -> usize {
            1
        }
        fn bounds(&mut self, _: &State, out: &mut [AffineRateBound]) -> Result<()> {
            out[0] = AffineRateBound::constant(1.0);
            Ok(())
        }
        fn rate<R: Rng + ?Sized>(&mut self, _: usize, _: &State, _: &mut R) -> Result<(f64, ())> {
            Ok((2.0, ()))
        }
        fn jump<R: Rng + ?Sized>(
            &mut self,
            _: usize,
            s: &State,
            _: (),
            _: &mut R,
        ) -> (Vec<f64>, EventKind) {
            (s.v.clone(), EventKind::Switch(0))
        }
        fn reflect<R: Rng + ?Sized>(
            &mut self,
            s: &State,
            _: &Polytope,
            _: usize,
            _: &mut R,
        ) -> Vec<f64> {
            s.v.clone()
        }
        fn grad_evals(&self) -> u64 {
            0
        }
    }

    #[test]
    fn bound_violation_aborts() {
        let free = Polytope::unrestricted(1);
        let err = simulate(
            State::new(vec![0.0], vec![1.0]),
            &mut Lying,
            &free,
            StopRule::MaxEvents(5),
            &mut rng(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::BoundViolation { .. }));
    }

    /// Hands out numbered estimates and checks that `jump` receives the one
    /// produced by the accepting `rate` call.
    struct Tagged {
        issued: u64,
        last_issued: Option<u64>,
        jumps: u64,
    }

    impl Dynamics for Tagged {
        type Estimate = Box<u64>;
        fn name(&self) -> &'static str {
            "tagged"
        }
        fn clock_count(&self) -> usize {
            1
        }
        fn bounds(&mut self, _: &State, out: &mut [AffineRateBound]) -> Result<()> {
            out[0] = AffineRateBound::constant(2.0);
            Ok(())
        }
        fn rate<R: Rng + ?Sized>(
            &mut self,
            _: usize,
            _: &State,
            rng: &mut R,
        ) -> Result<(f64, Box<u64>)> {
            self.issued += 1;
            self.last_issued = Some(self.issued);
            Ok((rng.gen_range(0.0..2.0), Box::new(self.issued)))
        }
        fn jump<R: Rng + ?Sized>(
            &mut self,
            _: usize,
            s: &State,
            estimate: Box<u64>,
            _: &mut R,
        ) -> (Vec<f64>, EventKind) {
            assert_eq!(Some(*estimate), self.last_issued);
            self.jumps += 1;
            (s.v.clone(), EventKind::Switch(0))
        }
        fn reflect<R: Rng + ?Sized>(
            &mut self,
            s: &State,
            _: &Polytope,
            _: usize,
            _: &mut R,
        ) -> Vec<f64> {
            s.v.clone()
        }
        fn grad_evals(&self) -> u64 {
            0
        }
    }

    #[test]
    fn accepted_estimate_reaches_the_jump() {
        let mut dynamics = Tagged {
            issued: 0,
            last_issued: None,
            jumps: 0,
        };
        simulate(
            State::new(vec![0.0], vec![1.0]),
            &mut dynamics,
            &Polytope::unrestricted(1),
            StopRule::MaxEvents(200),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(dynamics.jumps, 200);
        assert!(dynamics.issued > 200);
    }
}
