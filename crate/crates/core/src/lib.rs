//! Exact and sampled gradient estimators for softmax regression with many
//! classes.
//!
//! The crate is `no_std` (it needs `alloc`). It covers the exact model
//! ([`model`]), negative-class samplers ([`samplers`]), the gradient
//! estimators ([`estimators`]), momentum ascent ([`trainer`]) and the
//! synthetic-data comparison harness ([`experiments`]). File formats and the
//! command line live in the `softmax-lab` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod trainer;

pub use error::{Error, Result};
pub use estimators::{Estimator, EstimatorConfig, Method, PositiveSetMode, SampledSet};
pub use model::{ClassId, Dataset, ModelParams, SparseGradient};
pub use trainer::TrainerConfig;
