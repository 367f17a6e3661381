//! Discrete-time Markov progression models for multi-level clustered,
//! irregularly observed longitudinal data.
//!
//! Transitions between consecutive visits follow a multinomial logistic model
//! per origin state, adjusted for the course index, time since the course
//! started and the gap time to the next visit. Point estimates maximize a
//! composite likelihood that treats transitions as independent; confidence
//! intervals come from bootstrapping top-level clusters, either by refitting
//! each resample or by the one-step estimating function bootstrap.

pub mod data_model;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod occupancy;
pub mod resampling;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
