use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pdmc::domain::Polytope;
use pdmc::event::{first_arrival_affine, AffineRateBound};
use pdmc::models::{generate_logistic_data, LogisticModel, TargetModel};
use pdmc::pdmp::{simulate, StopRule};
use pdmc::samplers::{Bps, GradientMode, VelocityLaw, ZigZag};
use pdmc::subsample::find_reference;
use pdmc::trajectory::State;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn logistic(n: usize) -> LogisticModel {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    LogisticModel::new(generate_logistic_data(n, 5, 10.0, &mut rng).unwrap())
}

fn arrivals(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bound = AffineRateBound::new(1.0, 2.0);
    c.bench_function("first_arrival_affine", |b| {
        b.iter(|| first_arrival_affine(black_box(&bound), &mut rng).unwrap())
    });
}

fn hit_times(c: &mut Criterion) {
    let simplex = Polytope::simplex(20, 10.0).unwrap();
    let x = vec![0.25; 20];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = VelocityLaw::UniformSphere.sample(20, &mut rng);
    c.bench_function("simplex_hit_time_d20", |b| {
        b.iter(|| simplex.hit_time(black_box(&x), black_box(&v)).unwrap())
    });
}

fn gradients(c: &mut Criterion) {
    let model = logistic(1000);
    let domain = Polytope::simplex(5, 10.0).unwrap();
    let cv = find_reference(&model, &domain, &[1.0; 5], None).unwrap();
    let x = vec![1.2, 1.4, 1.1, 1.9, 1.5];
    let mut out = vec![0.0; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("gradient_n1000");
    group.bench_function("full", |b| b.iter(|| model.gradient(black_box(&x), &mut out)));
    group.bench_function("control_variate", |b| {
        b.iter(|| cv.estimate_grad(&model, black_box(&x), &mut rng, &mut out))
    });
    group.finish();
}

/// Cost of a fixed stretch of simulated time, with and without subsampling.
fn trajectories(c: &mut Criterion) {
    let mut group = c.benchmark_group("logistic_time_10");
    group.sample_size(10);
    for n in [1000, 10_000] {
        let model = logistic(n);
        let domain = Polytope::simplex(5, 10.0).unwrap();
        let cv = find_reference(&model, &domain, &[1.0; 5], None).unwrap();
        let x0 = cv.x_hat().to_vec();
        for (label, subsampled) in [("bps_exact", false), ("bps_subsampled", true)] {
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
                let mut rng = ChaCha8Rng::seed_from_u64(4);
                b.iter(|| {
                    let mode = if subsampled {
                        GradientMode::Subsampled(cv.clone())
                    } else {
                        GradientMode::Exact
                    };
                    let mut bps = Bps::new(&model, VelocityLaw::UniformSphere, 1.0, mode).unwrap();
                    let v0 = bps.initial_velocity(&mut rng);
                    simulate(State::new(x0.clone(), v0), &mut bps, &domain, StopRule::MaxTime(10.0), &mut rng)
                        .unwrap()
                })
            });
        }
        group.bench_with_input(BenchmarkId::new("zigzag_subsampled", n), &n, |b, _| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            b.iter(|| {
                let mut zz = ZigZag::new(&model, GradientMode::Subsampled(cv.clone())).unwrap();
                let v0 = zz.initial_velocity(&mut rng);
                simulate(State::new(x0.clone(), v0), &mut zz, &domain, StopRule::MaxTime(10.0), &mut rng).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, arrivals, hit_times, gradients, trajectories);
criterion_main!(benches);
