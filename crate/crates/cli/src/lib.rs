//! Experiment runner for the `pdmc` samplers: JSON configs in, trajectories,
//! diagnostics and a manifest out.

pub mod config;
pub mod model;
pub mod runner;
pub mod validate;
