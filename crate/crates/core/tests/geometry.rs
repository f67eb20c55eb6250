use pdmc::domain::{resample_boundary, specular_reflect, Polytope};
use pdmc::linalg::{dot, norm};
use pdmc::samplers::VelocityLaw;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_in_simplex(d: usize, total: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Sorted uniforms give the spacings of a Dirichlet(1, ..., 1) vector.
    let mut cuts: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2).take(d).map(|w| (w[1] - w[0]) * total * 0.999).collect()
}

#[test]
fn hit_time_is_exact_on_the_experiment_polytope() {
    let domain = Polytope::simplex(5, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = 1e-6;
    for _ in 0..10_000 {
        let x = uniform_in_simplex(5, 10.0, &mut rng);
        let v = VelocityLaw::UniformSphere.sample(5, &mut rng);
        let hit = domain.hit_time(&x, &v).unwrap();
        assert!(hit.tau_b.is_finite());
        let face = hit.face.unwrap();
        let at = |s: f64| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        let con = &domain.constraints()[face];
        assert!(con.slack(&at(hit.tau_b + eps)) < 0.0);
        assert!(domain.contains(&at(hit.tau_b - eps)));
        assert!(con.slack(&at(hit.tau_b)).abs() < 1e-9);
    }
}

#[test]
fn resampled_inward_draws_point_inward_on_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = [1.0, 0.0];
    let mut sum = [0.0, 0.0];
    let mut kept = 0;
    for _ in 0..10_000 {
        let v = resample_boundary(VelocityLaw::UniformSphere, 2, &mut rng);
        if dot(&v, &n) <= 0.0 {
            sum[0] += v[0];
            sum[1] += v[1];
            kept += 1;
        }
    }
    assert!(sum[0] / (kept as f64) < -0.5);
}

#[test]
fn raw_gaussian_resamples_have_zero_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples = 10_000;
    let mut sum = [0.0; 3];
    for _ in 0..samples {
        let v = resample_boundary(VelocityLaw::GaussianIsotropic, 3, &mut rng);
        sum.iter_mut().zip(&v).for_each(|(s, c)| *s += c);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / samples as f64).collect();
    assert!(norm(&mean) <= 3.0 / (samples as f64).sqrt());
}

proptest! {
    #[test]
    fn reflection_reverses_normal_component(
        v in proptest::collection::vec(-3.0..3.0f64, 3),
        g in proptest::collection::vec(-3.0..3.0f64, 3),
    ) {
        prop_assume!(norm(&g) > 1e-3);
        let n: Vec<f64> = g.iter().map(|c| c / norm(&g)).collect();
        let w = specular_reflect(&v, &n);
        prop_assert!((dot(&w, &n) + dot(&v, &n)).abs() <= 1e-14 * (1.0 + norm(&v)));
        prop_assert!((norm(&w) - norm(&v)).abs() <= 1e-14 * (1.0 + norm(&v)));
        let back = specular_reflect(&w, &n);
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + norm(&v)));
        }
    }
}
