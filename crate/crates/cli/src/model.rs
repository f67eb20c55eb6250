use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nalgebra::DMatrix;
use pdmc::domain::Polytope;
use pdmc::models::{generate_logistic_data, GaussianTarget, LogisticData, LogisticModel, LogisticSidecar, TargetModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DomainConfig, ExperimentConfig, ModelConfig, NamedDomain};

/// Either of the shipped targets behind one type.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Gaussian(GaussianTarget),
    Logistic(LogisticModel),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Gaussian($m) => $body,
            AnyModel::Logistic($m) => $body,
        }
    };
}

impl TargetModel for AnyModel {
    fn dim(&self) -> usize {
        delegate!(self, m => m.dim())
    }
    fn num_data(&self) -> usize {
        delegate!(self, m => m.num_data())
    }
    fn potential(&self, x: &[f64]) -> f64 {
        delegate!(self, m => m.potential(x))
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.gradient(x, out))
    }
    fn datum_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.datum_gradient(i, x, out))
    }
    fn hessian_bound(&self) -> f64 {
        delegate!(self, m => m.hessian_bound())
    }
    fn datum_hessian_bound(&self) -> f64 {
        delegate!(self, m => m.datum_hessian_bound())
    }
    fn potential_and_gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        delegate!(self, m => m.potential_and_gradient(x, out))
    }
}

/// Where the logistic data came from.
#[derive(Debug, Clone, Serialize)]
pub struct DataSource {
    pub path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n: usize,
    pub p: usize,
    pub x_star: Option<Vec<f64>>,
}

/// Builds the model, writing generated data to `out/data.csv` when `out` is given.
pub fn build_model(config: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<(AnyModel, Option<DataSource>)> {
    match &config.model {
        ModelConfig::Gaussian { mean, covariance } => {
            let d = mean.len();
            let cov = match covariance {
                None => DMatrix::identity(d, d),
                Some(rows) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        bail!("covariance must be {d} x {d}");
                    }
                    DMatrix::from_fn(d, d, |i, j| rows[i][j])
                }
            };
            Ok((AnyModel::Gaussian(GaussianTarget::new(mean.clone(), cov)?), None))
        }
        ModelConfig::Logistic {
            n,
            p,
            budget,
            data,
            seed,
        } => {
            let (data, source) = match data {
                Some(path) => {
                    let (data, sidecar) =
                        LogisticData::load(path).with_context(|| format!("loading {}", path.display()))?;
                    if let Some(p) = p {
                        if *p != data.dim() {
                            bail!("config says p = {p} but {} has {} covariates", path.display(), data.dim());
                        }
                    }
                    let source = DataSource {
                        path: Some(path.clone()),
                        seed: sidecar.as_ref().and_then(|s| s.seed),
                        n: data.len(),
                        p: data.dim(),
                        x_star: data.x_star.clone(),
                    };
                    (data, source)
                }
                None => {
                    let (n, p) = (n.unwrap_or(0), p.unwrap_or(0));
                    let seed = seed.unwrap_or(config.seed);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let data = generate_logistic_data(n, p, *budget, &mut rng)?;
                    let path = match out {
                        Some(dir) => {
                            let path = dir.join("data.csv");
                            let sidecar = LogisticSidecar {
                                seed: Some(seed),
                                n,
                                p,
                                budget: Some(*budget),
                                x_star: data.x_star.clone(),
                                covariate_law: "uniform[-1,1]".into(),
                            };
                            data.save(&path, &sidecar)
                                .with_context(|| format!("writing {}", path.display()))?;
                            // Relative to the output directory, so manifests do not depend on where it lives.
                            Some(PathBuf::from("data.csv"))
                        }
                        None => None,
                    };
                    let source = DataSource {
                        path,
                        seed: Some(seed),
                        n,
                        p,
                        x_star: data.x_star.clone(),
                    };
                    (data, source)
                }
            };
            Ok((AnyModel::Logistic(LogisticModel::new(data)), Some(source)))
        }
    }
}

pub fn build_domain(config: &ExperimentConfig, dim: usize) -> anyhow::Result<Polytope> {
    let domain = match &config.domain {
        Some(DomainConfig::Polytope(p)) => p.clone(),
        Some(DomainConfig::Named(NamedDomain::Unrestricted)) => Polytope::unrestricted(dim),
        Some(DomainConfig::Named(NamedDomain::Simplex { dim: d, total })) => {
            Polytope::simplex(d.unwrap_or(dim), *total)?
        }
        Some(DomainConfig::Named(NamedDomain::Box { lower, upper })) => Polytope::boxed(lower, upper)?,
        None => match &config.model {
            ModelConfig::Logistic { budget, .. } => Polytope::simplex(dim, *budget)?,
            ModelConfig::Gaussian { .. } => Polytope::unrestricted(dim),
        },
    };
    if domain.dim() != dim {
        bail!("domain has dimension {} but the model has {dim}", domain.dim());
    }
    Ok(domain)
}

/// Initial guess for the reference search: the model's natural centre,
/// pulled inside the domain.
pub fn initial_guess(config: &ExperimentConfig, model: &AnyModel, domain: &Polytope) -> Vec<f64> {
    let centre = match (&config.model, model) {
        (_, AnyModel::Gaussian(g)) => g.mean().to_vec(),
        (ModelConfig::Logistic { budget, .. }, AnyModel::Logistic(m)) => {
            let p = m.dim();
            vec![budget / (2.0 * p as f64); p]
        }
        _ => vec![0.0; model.dim()],
    };
    domain.project(&centre, pdmc::subsample::REFERENCE_MARGIN)
}
