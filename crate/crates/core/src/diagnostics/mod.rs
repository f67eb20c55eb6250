//! Time averages, effective sample sizes and stationarity checks.

mod average;
mod conditions;
mod ess;

pub use average::{
    discretize, time_average, trajectory_ess, AverageMode, Observable, Quadratic, DEFAULT_ESS_SAMPLES,
};
pub use conditions::{
    check_generator_zero, check_intensity_condition, intensity_residual, InflatedRates, QuadratureGrid,
    TestFunction,
};
pub use ess::{ess_batch_means, EssReport, MIN_SAMPLES};
