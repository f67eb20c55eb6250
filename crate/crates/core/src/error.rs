use thiserror::Error;

/// Errors raised by the samplers, geometry and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("initial position is not inside the domain (constraint {constraint} violated by {excess:e})")]
    InvalidStart { constraint: usize, excess: f64 },

    #[error("position lies outside the domain (constraint {constraint} violated by {excess:e})")]
    OutsideDomain { constraint: usize, excess: f64 },

    #[error("switching rate of clock {clock} evaluated to a non-finite value ({value})")]
    NonFiniteRate { clock: usize, value: f64 },

    #[error("stuck at boundary: {retries} consecutive zero-time boundary events at t = {time}")]
    StuckAtBoundary { time: f64, retries: usize },

    #[error("rate bound intercept must be non-negative, got {0}")]
    NegativeIntercept(f64),

    #[error("thinning bound violated: true rate {rate} exceeds bound {bound}")]
    BoundViolation { rate: f64, bound: f64 },

    #[error("cumulative rate integral decreased from {from} to {to}")]
    NonMonotoneIntegral { from: f64, to: f64 },

    #[error("bounce requested with a vanishing gradient")]
    ZeroGradient,

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("velocity must have unit norm, got norm {0}")]
    NonUnitVelocity(f64),

    #[error("potential became non-finite at iteration {0}")]
    NonFinitePotential(usize),

    #[error("at least {required} samples are required, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("exact time averages need a polynomial observable of degree at most two")]
    UnsupportedFunction,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid polytope: {0}")]
    InvalidPolytope(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
