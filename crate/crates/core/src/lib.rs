//! Piecewise deterministic Monte Carlo on convex polytopes.
//!
//! The bouncy particle and zig-zag samplers run on domains given as finite
//! intersections of half-spaces, with specular reflection at the faces.
//! Gradients can be exact or single-datum control-variate estimates, the
//! latter paired with envelopes valid for every datum so that thinning stays
//! exact. Diagnostics cover time averages, batch-means effective sample
//! size and numerical checks of the stationarity conditions.

// `!(a > b)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod event;
pub mod linalg;
pub mod models;
pub mod pdmp;
pub mod samplers;
pub mod subsample;
pub mod trajectory;

pub use domain::{BoundaryHit, Constraint, Polytope};
pub use error::{Error, Result};
pub use event::AffineRateBound;
pub use models::{GaussianTarget, LogisticData, LogisticModel, TargetModel};
pub use pdmp::{simulate, Dynamics, StopRule};
pub use samplers::{Bps, BpsSpec, GradientMode, VelocityLaw, ZigZag, ZigZagSpec};
pub use subsample::ControlVariate;
pub use trajectory::{EventKind, EventRecord, State, Trajectory};
