//! Latent Markov models for categorical panel data.

pub mod basic;
pub mod cli;
pub mod cov_latent;
pub mod cov_manifest;
pub mod data;
pub mod decoding;
pub mod error;
pub mod fit;
pub mod fitted;
pub mod inference;
mod logit;
pub mod mixed;
pub mod model;
pub mod prob;
pub mod recursions;
pub mod report;

pub use error::{LmError, Result};
