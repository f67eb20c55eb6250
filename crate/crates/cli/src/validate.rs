use std::fmt;

use anyhow::Context;
use pdmc::diagnostics::{
    check_generator_zero, check_intensity_condition, InflatedRates, QuadratureGrid, TestFunction,
};
use pdmc::domain::specular_reflect;
use pdmc::linalg::{dot, norm};
use pdmc::models::{GaussianTarget, TargetModel};
use pdmc::samplers::{BpsScheme, SwitchingScheme, VelocityLaw, ZigZagScheme};
use pdmc::subsample::{dominance_sweep, find_reference, ControlVariate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Reference};
use crate::model::{build_domain, build_model, initial_guess};

pub const INTENSITY_POINTS: usize = 10_000;
pub const INTENSITY_TOL: f64 = 1e-12;
pub const REFLECTION_TRIALS: usize = 10_000;
pub const REFLECTION_TOL: f64 = 1e-14;
pub const UNBIASED_POSITIONS: usize = 100;
pub const UNBIASED_TOL: f64 = 1e-10;
pub const SWEEP_TRIALS: usize = 10_000;
pub const SWEEP_RADIUS: f64 = 1.0;
pub const GENERATOR_RESOLUTION: usize = 400;
pub const GENERATOR_TOL: f64 = 1e-4;
pub const CONTROL_FLOOR: f64 = 1e-2;

/// One checked property. `value` is compared against `threshold` in the
/// direction given by `at_most`.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub at_most: bool,
    pub critical: bool,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            at_most: true,
            critical: true,
        }
    }

    fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            at_most: false,
            critical: true,
        }
    }

    pub fn passed(&self) -> bool {
        if self.at_most {
            self.value <= self.threshold
        } else {
            self.value > self.threshold
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let op = if self.at_most { "<=" } else { ">" };
        write!(f, "{verdict} {}: {:.3e} {op} {:.1e}", self.name, self.value, self.threshold)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| c.critical).all(Check::passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Intensity residual scaled by the gradient size, so that the tolerance is
/// meaningful for targets with large gradients.
pub fn intensity_check<S: SwitchingScheme, M: TargetModel + ?Sized>(
    scheme: &S,
    model: &M,
    radius: f64,
    points: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = model.dim();
    let mut grad = vec![0.0; d];
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..=radius)).collect();
        model.gradient(&x, &mut grad);
        let scale = 1.0 + grad.iter().map(|g| g.abs()).sum::<f64>();
        let u = scheme.sample_velocity(d, rng);
        let r = pdmc::diagnostics::intensity_residual(scheme, &grad, &u);
        worst = worst.max(r.abs() / scale);
    }
    worst
}

/// Largest deviation from the three reflection identities over random unit
/// normals and velocities: normal component negated, norm preserved, and
/// reflecting twice gives back `v`.
pub fn reflection_check(dim: usize, trials: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut worst = [0.0_f64; 3];
    for _ in 0..trials {
        let n = VelocityLaw::UniformSphere.sample(dim, rng);
        let v = VelocityLaw::UniformSphere.sample(dim, rng);
        let r = specular_reflect(&v, &n);
        worst[0] = worst[0].max((dot(&n, &r) + dot(&n, &v)).abs());
        worst[1] = worst[1].max((norm(&r) - norm(&v)).abs());
        let back = specular_reflect(&r, &n);
        let drift = back.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst[2] = worst[2].max(drift);
    }
    worst
}

/// Largest relative gap between the average of the control-variate estimate
/// over every datum and the full gradient, at `positions` random points
/// within `radius` of the reference.
pub fn unbiasedness_check<M: TargetModel + ?Sized>(
    cv: &ControlVariate,
    model: &M,
    radius: f64,
    positions: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = model.dim();
    let n = model.num_data();
    let mut est = vec![0.0; d];
    let mut full = vec![0.0; d];
    let mut worst = 0.0_f64;
    for _ in 0..positions {
        let x: Vec<f64> = cv.x_hat().iter().map(|c| c + rng.gen_range(-radius..=radius)).collect();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            cv.estimate_with_index(model, &x, i, &mut est);
            mean.iter_mut().zip(&est).for_each(|(m, e)| *m += e);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        model.gradient(&x, &mut full);
        let gap = mean.iter().zip(&full).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(gap / (1.0 + norm(&full)));
    }
    worst
}

/// Generator check on the standard Gaussian restricted to `x > 0`. Returns
/// the three admissible test-function values followed by the odd-in-`v`
/// negative control.
pub fn generator_check<S: SwitchingScheme>(scheme: &S, resolution: usize) -> [f64; 4] {
    let target = GaussianTarget::standard(1);
    let grid = QuadratureGrid {
        lower: vec![0.0],
        upper: vec![10.0],
        resolution,
    };
    let velocities = [(vec![1.0], 0.5), (vec![-1.0], 0.5)];
    let sq = |x: &[f64], _: &[f64]| x[0] * x[0];
    let vx = |x: &[f64], v: &[f64]| v[0] * x[0];
    let vxx = |x: &[f64], v: &[f64]| v[0] * x[0] * x[0];
    let odd = |_: &[f64], v: &[f64]| v[0];
    let tests = [
        TestFunction { name: "x^2", f: &sq },
        TestFunction { name: "v x", f: &vx },
        TestFunction { name: "v x^2", f: &vxx },
        TestFunction { name: "v", f: &odd },
    ];
    let r = check_generator_zero(scheme, &target, &grid, &velocities, &tests);
    [r[0], r[1], r[2], r[3]]
}

/// Runs every invariant suite against the model and bound described by `config`.
pub fn validate(config: &ExperimentConfig) -> anyhow::Result<Report> {
    config.check()?;
    let (model, _) = build_model(config, None)?;
    let domain = build_domain(config, model.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = model.dim();
    let mut report = Report::default();

    let radius = 3.0;
    report.checks.push(Check::below(
        "intensity condition (bps)",
        intensity_check(&BpsScheme, &model, radius, INTENSITY_POINTS, &mut rng),
        INTENSITY_TOL,
    ));
    report.checks.push(Check::below(
        "intensity condition (zigzag)",
        intensity_check(&ZigZagScheme, &model, radius, INTENSITY_POINTS, &mut rng),
        INTENSITY_TOL,
    ));
    let inflated = InflatedRates {
        inner: BpsScheme,
        extra: 0.1,
    };
    report.checks.push(Check::above(
        "intensity negative control",
        check_intensity_condition(&inflated, &model, radius, 1000, &mut rng),
        CONTROL_FLOOR,
    ));

    let [normal, length, involution] = reflection_check(d.max(2), REFLECTION_TRIALS, &mut rng);
    report.checks.push(Check::below("reflection negates normal component", normal, REFLECTION_TOL));
    report.checks.push(Check::below("reflection preserves speed", length, REFLECTION_TOL));
    report.checks.push(Check::below("reflection is an involution", involution, REFLECTION_TOL));

    let lipschitz = config.lipschitz.value();
    let cv = match &config.reference {
        Reference::Point(p) => ControlVariate::new(
            &model,
            p.clone(),
            lipschitz.unwrap_or_else(|| model.datum_hessian_bound()),
        )?,
        Reference::Auto(_) => {
            let guess = config
                .start
                .clone()
                .unwrap_or_else(|| initial_guess(config, &model, &domain));
            find_reference(&model, &domain, &guess, lipschitz).context("searching for the reference point")?
        }
    };
    report.checks.push(Check::below(
        "control variate unbiasedness",
        unbiasedness_check(&cv, &model, SWEEP_RADIUS, UNBIASED_POSITIONS, &mut rng),
        UNBIASED_TOL,
    ));
    let sweep = dominance_sweep(&cv, &model, SWEEP_RADIUS, SWEEP_TRIALS, &mut rng)?;
    report.checks.push(Check::below(
        format!("bound dominance violations (L = {})", cv.lipschitz()),
        sweep.violations as f64,
        0.0,
    ));

    for (label, values) in [
        ("bps", generator_check(&BpsScheme, GENERATOR_RESOLUTION)),
        ("zigzag", generator_check(&ZigZagScheme, GENERATOR_RESOLUTION)),
    ] {
        let worst = values[..3].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        report
            .checks
            .push(Check::below(format!("generator identity ({label})"), worst, GENERATOR_TOL));
        report.checks.push(Check::above(
            format!("generator negative control ({label})"),
            values[3].abs(),
            CONTROL_FLOOR,
        ));
    }
    Ok(report)
}
