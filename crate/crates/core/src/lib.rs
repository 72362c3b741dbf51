//! Class-specific copula fusion of segmentation classifier outputs.

pub mod baselines;
pub mod cli;
pub mod copula;
pub mod data;
pub mod error;
pub mod fitting;
pub mod fusion;
pub mod io;
pub mod marginals;
pub mod metrics;
pub mod optimize;
pub mod quadrature;
pub mod seed;
pub mod simulator;
pub mod special;

pub use error::{Error, Result};
