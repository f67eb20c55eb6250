//! Metropolis-adjusted Langevin and Hamiltonian Monte Carlo with proposals
//! outside the domain rejected outright.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::Polytope;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::models::TargetModel;

pub const DEFAULT_LEAPFROG_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct MhChainState {
    pub x: Vec<f64>,
    pub potential_at_x: f64,
    pub grad_at_x: Vec<f64>,
    pub accepted_count: u64,
    pub proposed_count: u64,
    /// Per-datum gradient evaluations spent so far.
    pub grad_evals: u64,
}

impl MhChainState {
    pub fn new<M: TargetModel + ?Sized>(model: &M, domain: &Polytope, x: Vec<f64>) -> Result<Self> {
        if x.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: x.len(),
            });
        }
        if let Some((constraint, excess)) = domain.first_violation(&x) {
            return Err(Error::InvalidStart { constraint, excess });
        }
        let mut grad = vec![0.0; x.len()];
        let u = model.potential_and_gradient(&x, &mut grad);
        if !u.is_finite() {
            return Err(Error::NonFinitePotential(0));
        }
        Ok(MhChainState {
            x,
            potential_at_x: u,
            grad_at_x: grad,
            accepted_count: 0,
            proposed_count: 0,
            grad_evals: model.num_data() as u64,
        })
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed_count == 0 {
            0.0
        } else {
            self.accepted_count as f64 / self.proposed_count as f64
        }
    }
}

fn normals<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// `log q(to | from)` up to a constant for the Langevin proposal.
fn langevin_log_density(to: &[f64], from: &[f64], grad_from: &[f64], h: f64) -> f64 {
    let half = 0.5 * h * h;
    let sq: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| {
            let r = t - f + half * g;
            r * r
        })
        .sum();
    -sq / (2.0 * h * h)
}

/// One Metropolis-adjusted Langevin step with step size `h`.
pub fn mala_step<M, R>(state: &mut MhChainState, model: &M, domain: &Polytope, h: f64, rng: &mut R)
where
    M: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    state.proposed_count += 1;
    let half = 0.5 * h * h;
    let noise = normals(state.x.len(), rng);
    let proposal: Vec<f64> = state
        .x
        .iter()
        .zip(&state.grad_at_x)
        .zip(&noise)
        .map(|((x, g), z)| x - half * g + h * z)
        .collect();
    if !domain.contains(&proposal) {
        return;
    }
    let mut grad = vec![0.0; proposal.len()];
    let u = model.potential_and_gradient(&proposal, &mut grad);
    state.grad_evals += model.num_data() as u64;
    if !u.is_finite() {
        return;
    }
    let log_ratio = state.potential_at_x - u + langevin_log_density(&state.x, &proposal, &grad, h)
        - langevin_log_density(&proposal, &state.x, &state.grad_at_x, h);
    if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
        state.x = proposal;
        state.potential_at_x = u;
        state.grad_at_x = grad;
        state.accepted_count += 1;
    }
}

/// End point of a leapfrog integration.
#[derive(Debug, Clone)]
pub struct LeapfrogEnd {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub potential: f64,
    pub grad: Vec<f64>,
}

/// Integrates Hamilton's equations for `H = U(x) + ‖p‖²/2`. Returns `None`
/// as soon as an intermediate position leaves `domain`. The number of
/// per-datum gradient evaluations is added to `evals`.
#[allow(clippy::too_many_arguments)]
pub fn leapfrog<M: TargetModel + ?Sized>(
    model: &M,
    domain: Option<&Polytope>,
    x: &[f64],
    p: &[f64],
    grad: &[f64],
    h: f64,
    steps: usize,
    evals: &mut u64,
) -> Option<LeapfrogEnd> {
    let mut x = x.to_vec();
    let mut p: Vec<f64> = p.iter().zip(grad).map(|(pi, g)| pi - 0.5 * h * g).collect();
    let mut g = grad.to_vec();
    let mut u = f64::NAN;
    for step in 0..steps {
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += h * pi);
        if let Some(domain) = domain {
            if !domain.contains(&x) {
                return None;
            }
        }
        u = model.potential_and_gradient(&x, &mut g);
        *evals += model.num_data() as u64;
        let scale = if step + 1 == steps { 0.5 * h } else { h };
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi -= scale * gi);
    }
    Some(LeapfrogEnd {
        x,
        p,
        potential: u,
        grad: g,
    })
}

/// One Hamiltonian Monte Carlo step with fresh standard normal momentum.
pub fn hmc_step<M, R>(
    state: &mut MhChainState,
    model: &M,
    domain: &Polytope,
    h: f64,
    leapfrog_steps: usize,
    rng: &mut R,
) where
    M: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    assert!(leapfrog_steps >= 1, "at least one leapfrog step is required");
    state.proposed_count += 1;
    let p0 = normals(state.x.len(), rng);
    let Some(end) = leapfrog(
        model,
        Some(domain),
        &state.x,
        &p0,
        &state.grad_at_x,
        h,
        leapfrog_steps,
        &mut state.grad_evals,
    ) else {
        return;
    };
    if !end.potential.is_finite() {
        return;
    }
    let h0 = state.potential_at_x + 0.5 * dot(&p0, &p0);
    let h1 = end.potential + 0.5 * dot(&end.p, &end.p);
    let log_ratio = h0 - h1;
    if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
        state.x = end.x;
        state.potential_at_x = end.potential;
        state.grad_at_x = end.grad;
        state.accepted_count += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MhKind {
    Mala,
    Hmc { leapfrog_steps: usize },
}

impl MhKind {
    pub fn name(self) -> &'static str {
        match self {
            MhKind::Mala => "mala",
            MhKind::Hmc { .. } => "hmc",
        }
    }
}

/// Samples of a Metropolis chain together with its cost.
#[derive(Debug, Clone)]
pub struct MhChain {
    pub samples: Vec<Vec<f64>>,
    pub grad_evals: u64,
    pub acceptance_rate: f64,
}

/// Runs `iterations` steps from `start` and keeps every state.
pub fn run_chain<M, R>(
    kind: MhKind,
    model: &M,
    domain: &Polytope,
    start: Vec<f64>,
    h: f64,
    iterations: usize,
    rng: &mut R,
) -> Result<MhChain>
where
    M: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    let mut state = MhChainState::new(model, domain, start)?;
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        match kind {
            MhKind::Mala => mala_step(&mut state, model, domain, h, rng),
            MhKind::Hmc { leapfrog_steps } => hmc_step(&mut state, model, domain, h, leapfrog_steps, rng),
        }
        samples.push(state.x.clone());
    }
    Ok(MhChain {
        samples,
        grad_evals: state.grad_evals,
        acceptance_rate: state.acceptance_rate(),
    })
}

/// Log-spaced values `center · 10^{k / per_decade}` covering `decades`
/// decades centred on `center`.
pub fn log_grid(center: f64, per_decade: usize, decades: usize) -> Vec<f64> {
    let count = per_decade * decades;
    let low = -(decades as f64) / 2.0;
    (0..count)
        .map(|k| center * 10f64.powf(low + k as f64 / per_decade as f64))
        .collect()
}

/// Picks the grid value with the largest finite score.
pub fn tune_step_size<F>(grid: &[f64], mut score: F) -> Option<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    grid.iter()
        .map(|&h| (h, score(h)))
        .filter(|(_, s)| s.is_finite())
        .fold(None, |best, cand| match best {
            Some((_, s)) if s >= cand.1 => best,
            _ => Some(cand),
        })
}
