//! Multivariate BYM2 spatial regression: data generation, closed-form
//! conditioned estimator, MCMC sampler and evaluation tools.

pub mod closed_form;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod linalg;
pub mod mcmc;
pub mod nonspatial;
pub mod rng;
pub mod spatial;
pub mod stats;

pub use error::{Error, Result};
