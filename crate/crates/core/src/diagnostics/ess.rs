use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub function: String,
    pub estimate: f64,
    pub sample_variance: f64,
    pub asymptotic_variance: f64,
    pub ess: f64,
    /// Monte Carlo standard error of `estimate`, `sqrt(asymptotic_variance / n)`.
    pub standard_error: f64,
    pub samples: usize,
    /// Per-datum gradient evaluations divided by the number of data.
    pub epochs: f64,
    pub ess_per_epoch: f64,
}

impl EssReport {
    pub fn named(mut self, function: impl Into<String>) -> Self {
        self.function = function.into();
        self
    }

    /// Attaches the cost of producing the samples.
    pub fn with_epochs(mut self, epochs: f64) -> Self {
        self.epochs = epochs;
        self.ess_per_epoch = if epochs > 0.0 { self.ess / epochs } else { f64::NAN };
        self
    }
}

/// Effective sample size by non-overlapping batch means with `⌊√n⌋` batches.
pub fn ess_batch_means(samples: &[f64]) -> Result<EssReport> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            required: MIN_SAMPLES,
            got: n,
        });
    }
    let batches = (n as f64).sqrt().floor() as usize;
    let len = n / batches;
    let used = batches * len;

    let mean = samples.iter().sum::<f64>() / n as f64;
    // A repeated value must not pick up a spurious variance from rounding in `mean`.
    let constant = samples.iter().all(|&x| x == samples[0]);
    let sample_variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    let batch_means: Vec<f64> = samples[..used]
        .chunks_exact(len)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    let grand = batch_means.iter().sum::<f64>() / batches as f64;
    let between = batch_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let asymptotic_variance = len as f64 * between;

    let (sample_variance, asymptotic_variance) = if constant {
        (0.0, 0.0)
    } else {
        (sample_variance, asymptotic_variance)
    };
    let ess = if sample_variance <= 0.0 || asymptotic_variance <= 0.0 {
        0.0
    } else {
        (n as f64 * sample_variance / asymptotic_variance).clamp(0.0, n as f64)
    };
    Ok(EssReport {
        function: String::new(),
        estimate: mean,
        sample_variance,
        asymptotic_variance,
        ess,
        standard_error: (asymptotic_variance / n as f64).sqrt(),
        samples: n,
        epochs: 0.0,
        ess_per_epoch: f64::NAN,
    })
}
