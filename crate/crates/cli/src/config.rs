use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pdmc::domain::Polytope;
use pdmc::pdmp::StopRule;
use pdmc::samplers::{BoundaryKernel, BpsSpec};
use serde::{Deserialize, Serialize};

/// The literal string `"auto"` in the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reference {
    Auto(Auto),
    Point(Vec<f64>),
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Auto(Auto::Auto)
    }
}

/// A number, or `"auto"` to derive it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoValue {
    Auto(Auto),
    Value(f64),
}

impl Default for AutoValue {
    fn default() -> Self {
        AutoValue::Auto(Auto::Auto)
    }
}

impl AutoValue {
    pub fn value(self) -> Option<f64> {
        match self {
            AutoValue::Auto(_) => None,
            AutoValue::Value(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Gaussian {
        mean: Vec<f64>,
        /// Identity when absent.
        #[serde(default)]
        covariance: Option<Vec<Vec<f64>>>,
    },
    Logistic {
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        p: Option<usize>,
        /// Budget of the constraint `Σ x_j <= K`.
        #[serde(rename = "K")]
        budget: f64,
        /// Existing data CSV; generated from `seed` when absent.
        #[serde(default)]
        data: Option<PathBuf>,
        /// Generation seed, defaulting to the experiment seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedDomain {
    Unrestricted,
    Simplex {
        #[serde(default)]
        dim: Option<usize>,
        total: f64,
    },
    Box {
        lower: Vec<Option<f64>>,
        upper: Vec<Option<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainConfig {
    Polytope(Polytope),
    Named(NamedDomain),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "snake_case")]
pub enum SamplerConfig {
    Bps {
        #[serde(flatten)]
        spec: BpsSpec,
        #[serde(default)]
        boundary: BoundaryKernel,
    },
    Zigzag {
        #[serde(default)]
        boundary: BoundaryKernel,
    },
    Mala {
        #[serde(default)]
        step_size: AutoValue,
        #[serde(default = "default_iterations")]
        iterations: usize,
        #[serde(default)]
        tuning: Tuning,
    },
    Hmc {
        #[serde(default)]
        step_size: AutoValue,
        #[serde(default = "default_leapfrog")]
        leapfrog_steps: usize,
        #[serde(default = "default_iterations")]
        iterations: usize,
        #[serde(default)]
        tuning: Tuning,
    },
}

impl SamplerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerConfig::Bps { .. } => "bps",
            SamplerConfig::Zigzag { .. } => "zigzag",
            SamplerConfig::Mala { .. } => "mala",
            SamplerConfig::Hmc { .. } => "hmc",
        }
    }
}

/// Step-size search for the Metropolis baselines: short pilot chains on a
/// log grid centred at `1 / sqrt(Λ)`, keeping the best ESS per epoch of f1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tuning {
    pub pilot_iterations: usize,
    pub per_decade: usize,
    pub decades: usize,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning {
            pilot_iterations: 2000,
            per_decade: 10,
            decades: 2,
        }
    }
}

fn default_iterations() -> usize {
    10_000
}

fn default_leapfrog() -> usize {
    pdmc::baselines::DEFAULT_LEAPFROG_STEPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopConfig {
    MaxEvents(usize),
    MaxTime(f64),
}

impl Default for StopConfig {
    fn default() -> Self {
        StopConfig::MaxTime(1000.0)
    }
}

impl From<StopConfig> for StopRule {
    fn from(s: StopConfig) -> Self {
        match s {
            StopConfig::MaxEvents(n) => StopRule::MaxEvents(n),
            StopConfig::MaxTime(t) => StopRule::MaxTime(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Defaults to `{x >= 0, Σx <= K}` for logistic models and to the whole
    /// space for Gaussian ones.
    #[serde(default)]
    pub domain: Option<DomainConfig>,
    pub samplers: Vec<SamplerConfig>,
    /// Use single-datum control-variate gradients in the PDMP samplers.
    #[serde(default)]
    pub subsample: bool,
    #[serde(default)]
    pub reference: Reference,
    /// Per-datum Hessian bound for the subsampling envelopes.
    #[serde(default, rename = "L")]
    pub lipschitz: AutoValue,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Start of every chain; defaults to the reference point.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    /// Evenly spaced samples taken from each trajectory for ESS.
    #[serde(default = "default_ess_samples")]
    pub ess_samples: usize,
}

fn default_runs() -> usize {
    1
}

fn default_ess_samples() -> usize {
    pdmc::diagnostics::DEFAULT_ESS_SAMPLES
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).context("invalid experiment config")?;
        config.check()?;
        Ok(config)
    }

    /// Reads a config file. Relative data paths are resolved against the
    /// directory containing it.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_json(&text)?;
        if let ModelConfig::Logistic { data: Some(data), .. } = &mut config.model {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        if let ModelConfig::Logistic { data: Some(data), .. } = &config.model {
            if !data.exists() {
                bail!("data file {} does not exist", data.display());
            }
        }
        Ok(config)
    }

    pub fn check(&self) -> anyhow::Result<()> {
        if self.samplers.is_empty() {
            bail!("no samplers configured");
        }
        if self.runs == 0 {
            bail!("runs must be at least 1");
        }
        match &self.model {
            ModelConfig::Gaussian { mean, .. } if mean.is_empty() => bail!("Gaussian mean is empty"),
            ModelConfig::Logistic { n, p, budget, data, .. } => {
                if !(*budget > 0.0 && budget.is_finite()) {
                    bail!("K must be positive, got {budget}");
                }
                if data.is_none() {
                    match (n, p) {
                        (Some(0), _) => bail!("logistic model needs at least one data point (n = 0)"),
                        (_, Some(0)) => bail!("logistic model needs at least one covariate (p = 0)"),
                        (Some(_), Some(_)) => {}
                        _ => bail!("logistic model needs n and p when no data file is given"),
                    }
                }
            }
            _ => {}
        }
        if let AutoValue::Value(l) = self.lipschitz {
            if !(l >= 0.0 && l.is_finite()) {
                bail!("L must be finite and non-negative, got {l}");
            }
        }
        match self.stop {
            StopConfig::MaxTime(t) if !(t > 0.0 && t.is_finite()) => bail!("max_time must be positive"),
            StopConfig::MaxEvents(0) => bail!("max_events must be positive"),
            _ => {}
        }
        for s in &self.samplers {
            match s {
                SamplerConfig::Bps { spec, .. } => spec.validate()?,
                SamplerConfig::Mala { step_size, iterations, .. }
                | SamplerConfig::Hmc { step_size, iterations, .. } => {
                    if let AutoValue::Value(h) = step_size {
                        if !(*h > 0.0 && h.is_finite()) {
                            bail!("step size must be positive, got {h}");
                        }
                    }
                    if *iterations == 0 {
                        bail!("iterations must be positive");
                    }
                }
                SamplerConfig::Zigzag { .. } => {}
            }
            if let SamplerConfig::Hmc { leapfrog_steps: 0, .. } = s {
                bail!("leapfrog_steps must be at least 1");
            }
        }
        Ok(())
    }
}
