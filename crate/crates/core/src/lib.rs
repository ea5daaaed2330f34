//! Doubly robust kernel treatment effect tests for adaptively collected data.

pub mod adaptive_sim;
pub mod baselines;
pub mod dr_scores;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod nuisance;
pub mod scenarios;
pub mod stabilization;

pub use error::{Error, Result};
