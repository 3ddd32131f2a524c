//! Dirichlet process mixture input models with Gibbs sampling, propagated
//! through single-server queue simulations for input uncertainty
//! quantification.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod experiment;
pub mod gibbs;
pub mod metrics;
pub mod model;
pub mod predictive;
pub mod queue;
pub mod rng;
pub mod truth;
pub mod uq;

#[cfg(test)]
#[path = "../tests/common/mod.rs"]
mod testutil;

pub use error::{Error, Result};
pub use rng::RandomStream;
