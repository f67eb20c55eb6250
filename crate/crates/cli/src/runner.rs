use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pdmc::baselines::{log_grid, run_chain, tune_step_size, MhKind};
use pdmc::diagnostics::{
    discretize, ess_batch_means, time_average, AverageMode, EssReport, Observable, Quadratic,
};
use pdmc::domain::Polytope;
use pdmc::models::TargetModel;
use pdmc::pdmp::{simulate, Dynamics, StopRule};
use pdmc::samplers::{Bps, GradientMode, Preconditioner, ZigZag};
use pdmc::subsample::{find_reference, ControlVariate};
use pdmc::trajectory::{State, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AutoValue, ExperimentConfig, Reference, SamplerConfig, Tuning};
use crate::model::{build_domain, build_model, initial_guess, AnyModel, DataSource};

pub const F1: &str = "f1";
pub const F2: &str = "f2";

/// Offset separating pilot-chain seeds from production seeds.
const PILOT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// One line of `diagnostics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub run_id: String,
    pub sampler: String,
    pub function: String,
    pub estimate: f64,
    pub ess: f64,
    pub epochs: f64,
    pub ess_per_epoch: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub sampler: String,
    pub seed: u64,
    pub file: String,
    pub grad_evals: u64,
    pub epochs: f64,
    /// Recorded events for PDMP runs, iterations for Metropolis chains.
    pub length: usize,
    pub acceptance_rate: Option<f64>,
    pub step_size: Option<f64>,
    /// Emitted positions outside the domain (must be zero).
    pub constraint_violations: usize,
    /// Monte Carlo standard error of each estimate, by function.
    pub standard_errors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceRecord {
    pub x_hat: Vec<f64>,
    pub lipschitz: f64,
    pub preprocessing_grad_evals: u64,
    pub preprocessing_epochs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub run_seeds: Vec<u64>,
    pub epoch_definition: &'static str,
    pub functions: BTreeMap<&'static str, &'static str>,
    pub data: Option<DataSource>,
    pub domain: Polytope,
    pub reference: Option<ReferenceRecord>,
    pub start: Vec<f64>,
    pub step_sizes: BTreeMap<String, f64>,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub manifest: Manifest,
    pub rows: Vec<DiagnosticsRow>,
}

impl Summary {
    pub fn total_violations(&self) -> usize {
        self.manifest.runs.iter().map(|r| r.constraint_violations).sum()
    }
}

/// Model, domain, reference point and starting position shared by all runs.
pub struct Setup {
    pub model: AnyModel,
    pub domain: Polytope,
    pub data: Option<DataSource>,
    pub reference: Option<ControlVariate>,
    pub start: Vec<f64>,
}

impl Setup {
    pub fn new(config: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<Self> {
        let (model, data) = build_model(config, out)?;
        let domain = build_domain(config, model.dim())?;
        let lipschitz = config.lipschitz.value();
        let needs_reference = config.subsample || config.start.is_none();
        let reference = if needs_reference {
            let cv = match &config.reference {
                Reference::Point(p) => {
                    domain
                        .check_interior(p)
                        .context("reference point must lie inside the domain")?;
                    ControlVariate::new(&model, p.clone(), lipschitz.unwrap_or_else(|| model.datum_hessian_bound()))?
                }
                Reference::Auto(_) => {
                    let guess = config
                        .start
                        .clone()
                        .unwrap_or_else(|| initial_guess(config, &model, &domain));
                    find_reference(&model, &domain, &guess, lipschitz)?
                }
            };
            Some(cv)
        } else {
            None
        };
        let start = match (&config.start, &reference) {
            (Some(s), _) => s.clone(),
            (None, Some(cv)) => cv.x_hat().to_vec(),
            (None, None) => unreachable!("a reference is built whenever no start is given"),
        };
        if start.len() != model.dim() {
            bail!("start has dimension {} but the model has {}", start.len(), model.dim());
        }
        domain
            .check_interior(&start)
            .context("start must lie strictly inside the domain")?;
        Ok(Setup {
            model,
            domain,
            data,
            reference,
            start,
        })
    }
}

struct RunOutcome {
    record: RunRecord,
    rows: Vec<DiagnosticsRow>,
    body: RunBody,
}

enum RunBody {
    Path(Trajectory),
    Chain(Vec<Vec<f64>>),
}

fn f1(dim: usize) -> Quadratic {
    Quadratic::coordinate_mean(dim)
}

/// Reports for f1 and f2 from a trajectory mapped back to the original space.
fn pdmp_reports(traj: &Trajectory, model: &AnyModel, samples: usize) -> anyhow::Result<(Vec<EssReport>, Vec<Vec<f64>>)> {
    let points = discretize(traj, samples)?;
    let q = f1(model.dim());
    let v1: Vec<f64> = points.iter().map(|x| q.eval(x)).collect();
    let v2: Vec<f64> = points.iter().map(|x| -model.potential(x)).collect();
    let mut r1 = ess_batch_means(&v1)?.named(F1);
    r1.estimate = time_average(traj, &Observable::Polynomial(q), AverageMode::Exact)?;
    let r2 = ess_batch_means(&v2)?.named(F2);
    Ok((vec![r1, r2], points))
}

fn chain_reports(samples: &[Vec<f64>], model: &AnyModel) -> anyhow::Result<Vec<EssReport>> {
    let q = f1(model.dim());
    let v1: Vec<f64> = samples.iter().map(|x| q.eval(x)).collect();
    let v2: Vec<f64> = samples.iter().map(|x| -model.potential(x)).collect();
    Ok(vec![ess_batch_means(&v1)?.named(F1), ess_batch_means(&v2)?.named(F2)])
}

fn simulate_dynamics<D: Dynamics>(
    dynamics: &mut D,
    initial: State,
    domain: &Polytope,
    stop: StopRule,
    rng: &mut ChaCha8Rng,
) -> anyhow::Result<Trajectory> {
    Ok(simulate(initial, dynamics, domain, stop, rng)?)
}

fn gradient_mode<M: TargetModel>(
    config: &ExperimentConfig,
    setup: &Setup,
    model: &M,
    pre: Option<&Preconditioner>,
) -> anyhow::Result<GradientMode> {
    if !config.subsample {
        return Ok(GradientMode::Exact);
    }
    let cv = setup.reference.as_ref().expect("reference exists when subsampling");
    match pre {
        None => Ok(GradientMode::Subsampled(cv.clone())),
        Some(pre) => {
            let lipschitz = cv.lipschitz() * pre.max_eigenvalue();
            let y_hat = pre.to_whitened(cv.x_hat());
            Ok(GradientMode::Subsampled(ControlVariate::new(model, y_hat, lipschitz)?))
        }
    }
}

fn run_pdmp(
    config: &ExperimentConfig,
    setup: &Setup,
    sampler: &SamplerConfig,
    seed: u64,
) -> anyhow::Result<(Trajectory, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stop: StopRule = config.stop.into();
    match sampler {
        SamplerConfig::Bps { spec, boundary } => match spec.preconditioner_matrix()? {
            None => {
                let mode = gradient_mode(config, setup, &setup.model, None)?;
                let mut bps = Bps::new(&setup.model, spec.velocity_law, spec.refresh_rate, mode)?.with_boundary(*boundary);
                let v0 = bps.initial_velocity(&mut rng);
                let traj = simulate_dynamics(&mut bps, State::new(setup.start.clone(), v0), &setup.domain, stop, &mut rng)?;
                Ok((traj, bps.grad_evals()))
            }
            Some(m) => {
                let pre = Preconditioner::new(&m)?;
                let model = pre.model(&setup.model)?;
                let domain = pre.domain(&setup.domain)?;
                let mode = gradient_mode(config, setup, &model, Some(&pre))?;
                let mut bps = Bps::new(&model, spec.velocity_law, spec.refresh_rate, mode)?.with_boundary(*boundary);
                let v0 = bps.initial_velocity(&mut rng);
                let y0 = pre.to_whitened(&setup.start);
                let traj = simulate_dynamics(&mut bps, State::new(y0, v0), &domain, stop, &mut rng)?;
                Ok((pre.map_back(&traj), bps.grad_evals()))
            }
        },
        SamplerConfig::Zigzag { boundary } => {
            let mode = gradient_mode(config, setup, &setup.model, None)?;
            let mut zz = ZigZag::new(&setup.model, mode)?.with_boundary(*boundary);
            let v0 = zz.initial_velocity(&mut rng);
            let traj = simulate_dynamics(&mut zz, State::new(setup.start.clone(), v0), &setup.domain, stop, &mut rng)?;
            Ok((traj, zz.grad_evals()))
        }
        _ => unreachable!("not a PDMP sampler"),
    }
}

fn mh_kind(sampler: &SamplerConfig) -> Option<(MhKind, AutoValue, usize, Tuning)> {
    match sampler {
        SamplerConfig::Mala {
            step_size,
            iterations,
            tuning,
        } => Some((MhKind::Mala, *step_size, *iterations, *tuning)),
        SamplerConfig::Hmc {
            step_size,
            leapfrog_steps,
            iterations,
            tuning,
        } => Some((
            MhKind::Hmc {
                leapfrog_steps: *leapfrog_steps,
            },
            *step_size,
            *iterations,
            *tuning,
        )),
        _ => None,
    }
}

/// Grid search for the step size with the best ESS per epoch of f1.
pub fn tune_mh(setup: &Setup, kind: MhKind, tuning: Tuning, seed: u64) -> anyhow::Result<f64> {
    let lambda = setup.model.hessian_bound();
    let centre = if lambda > 0.0 { 1.0 / lambda.sqrt() } else { 1.0 };
    let grid = log_grid(centre, tuning.per_decade, tuning.decades);
    let n = setup.model.num_data() as f64;
    let q = f1(setup.model.dim());
    let scores: Vec<f64> = grid
        .par_iter()
        .enumerate()
        .map(|(k, &h)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(PILOT_SEED_OFFSET).wrapping_add(k as u64));
            let Ok(chain) = run_chain(kind, &setup.model, &setup.domain, setup.start.clone(), h, tuning.pilot_iterations, &mut rng)
            else {
                return f64::NAN;
            };
            let values: Vec<f64> = chain.samples.iter().map(|x| q.eval(x)).collect();
            match ess_batch_means(&values) {
                Ok(r) => r.ess / (chain.grad_evals as f64 / n),
                Err(_) => f64::NAN,
            }
        })
        .collect();
    let mut it = scores.iter();
    let best = tune_step_size(&grid, |_| *it.next().unwrap());
    match best {
        Some((h, score)) if score > 0.0 => {
            log::info!("{} step size {h:.4e} (ESS/epoch {score:.4})", kind.name());
            Ok(h)
        }
        _ => bail!("{} tuning found no step size with positive ESS", kind.name()),
    }
}

fn count_violations(domain: &Polytope, points: impl IntoIterator<Item = impl AsRef<[f64]>>) -> usize {
    points.into_iter().filter(|x| !domain.contains(x.as_ref())).count()
}

#[allow(clippy::too_many_arguments)]
fn execute(
    config: &ExperimentConfig,
    setup: &Setup,
    sampler: &SamplerConfig,
    run_id: String,
    seed: u64,
    step_size: Option<f64>,
) -> anyhow::Result<RunOutcome> {
    let n = setup.model.num_data() as f64;
    let name = sampler.name().to_string();
    let (body, reports, grad_evals, length, acceptance, violations) = match mh_kind(sampler) {
        None => {
            let (traj, evals) = run_pdmp(config, setup, sampler, seed)?;
            let (reports, points) = pdmp_reports(&traj, &setup.model, config.ess_samples)?;
            let violations = count_violations(&setup.domain, traj.events.iter().map(|e| &e.x))
                + count_violations(&setup.domain, &points);
            let len = traj.events.len();
            (RunBody::Path(traj), reports, evals, len, None, violations)
        }
        Some((kind, _, iterations, _)) => {
            let h = step_size.expect("step size resolved before execution");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chain = run_chain(kind, &setup.model, &setup.domain, setup.start.clone(), h, iterations, &mut rng)?;
            let reports = chain_reports(&chain.samples, &setup.model)?;
            let violations = count_violations(&setup.domain, &chain.samples);
            let len = chain.samples.len();
            (
                RunBody::Chain(chain.samples),
                reports,
                chain.grad_evals,
                len,
                Some(chain.acceptance_rate),
                violations,
            )
        }
    };
    let epochs = grad_evals as f64 / n;
    let reports: Vec<EssReport> = reports.into_iter().map(|r| r.with_epochs(epochs)).collect();
    let rows = reports
        .iter()
        .map(|r| DiagnosticsRow {
            run_id: run_id.clone(),
            sampler: name.clone(),
            function: r.function.clone(),
            estimate: r.estimate,
            ess: r.ess,
            epochs: r.epochs,
            ess_per_epoch: r.ess_per_epoch,
        })
        .collect();
    let record = RunRecord {
        file: format!("traj_{run_id}.csv"),
        run_id,
        sampler: name,
        seed,
        grad_evals,
        epochs,
        length,
        acceptance_rate: acceptance,
        step_size,
        constraint_violations: violations,
        standard_errors: reports.iter().map(|r| (r.function.clone(), r.standard_error)).collect(),
    };
    Ok(RunOutcome { record, rows, body })
}

/// Worker count from `PDMC_THREADS`, if set.
pub fn thread_limit() -> anyhow::Result<Option<usize>> {
    match std::env::var("PDMC_THREADS") {
        Ok(s) => {
            let n: usize = s.trim().parse().with_context(|| format!("PDMC_THREADS={s:?} is not a count"))?;
            Ok(Some(n.max(1)))
        }
        Err(_) => Ok(None),
    }
}

fn run_ids(config: &ExperimentConfig) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &config.samplers {
        *counts.entry(s.name()).or_default() += 1;
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    config
        .samplers
        .iter()
        .map(|s| {
            let k = seen.entry(s.name()).or_default();
            *k += 1;
            if counts[s.name()] > 1 {
                format!("{}{}", s.name(), *k)
            } else {
                s.name().to_string()
            }
        })
        .collect()
}

/// Runs every sampler `config.runs` times and writes the outputs to `out`.
pub fn run(config: &ExperimentConfig, out: &Path) -> anyhow::Result<Summary> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    pool.install(|| run_in_pool(config, out))
}

fn run_in_pool(config: &ExperimentConfig, out: &Path) -> anyhow::Result<Summary> {
    let setup = Setup::new(config, Some(out))?;
    let prefixes = run_ids(config);
    let run_seeds: Vec<u64> = (0..config.runs as u64).map(|r| config.seed.wrapping_add(r)).collect();

    let mut step_sizes = BTreeMap::new();
    let mut resolved = Vec::with_capacity(config.samplers.len());
    for (sampler, prefix) in config.samplers.iter().zip(&prefixes) {
        let h = match mh_kind(sampler) {
            None => None,
            Some((_, AutoValue::Value(h), _, _)) => Some(h),
            Some((kind, AutoValue::Auto(_), _, tuning)) => Some(tune_mh(&setup, kind, tuning, config.seed)?),
        };
        if let Some(h) = h {
            step_sizes.insert(prefix.clone(), h);
        }
        resolved.push(h);
    }

    let tasks: Vec<(usize, usize)> = (0..config.samplers.len())
        .flat_map(|s| (0..config.runs).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<anyhow::Result<RunOutcome>> = tasks
        .par_iter()
        .map(|&(s, r)| {
            let run_id = format!("{}_{r}", prefixes[s]);
            execute(config, &setup, &config.samplers[s], run_id, run_seeds[r], resolved[s])
                .with_context(|| format!("{} run {r}", prefixes[s]))
        })
        .collect();

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut rows = Vec::new();
    for outcome in outcomes {
        let outcome = outcome?;
        write_body(&out.join(&outcome.record.file), &outcome.body)?;
        rows.extend(outcome.rows);
        runs.push(outcome.record);
    }
    write_diagnostics(&out.join("diagnostics.csv"), &rows)?;

    let reference = setup.reference.as_ref().map(|cv| ReferenceRecord {
        x_hat: cv.x_hat().to_vec(),
        lipschitz: cv.lipschitz(),
        preprocessing_grad_evals: cv.preprocessing_grad_evals(),
        preprocessing_epochs: cv.preprocessing_grad_evals() as f64 / setup.model.num_data() as f64,
    });
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        seed: config.seed,
        run_seeds,
        epoch_definition: "one epoch is N per-datum gradient evaluations; reference search is reported separately",
        functions: BTreeMap::from([(F1, "mean of the coordinates"), (F2, "log density up to a constant")]),
        data: setup.data.clone(),
        domain: setup.domain.clone(),
        reference,
        start: setup.start.clone(),
        step_sizes,
        runs,
    };
    let manifest_path = out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    Ok(Summary { manifest, rows })
}

fn write_body(path: &PathBuf, body: &RunBody) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    match body {
        RunBody::Path(traj) => traj.write_csv(&mut w)?,
        RunBody::Chain(samples) => {
            let d = samples.first().map_or(0, Vec::len);
            let mut csv = csv::Writer::from_writer(&mut w);
            let mut header = vec!["iteration".to_string()];
            header.extend((1..=d).map(|j| format!("x_{j}")));
            csv.write_record(&header)?;
            for (k, x) in samples.iter().enumerate() {
                let mut rec = vec![(k + 1).to_string()];
                rec.extend(x.iter().map(|v| v.to_string()));
                csv.write_record(&rec)?;
            }
            csv.flush()?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_diagnostics(path: &Path, rows: &[DiagnosticsRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
