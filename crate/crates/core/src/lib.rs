//! Bayesian smoothing of functional data sharing a common Gaussian-process law.

pub mod babf;
pub mod bhm;
pub mod bspline;
pub mod commands;
pub mod config;
pub mod css;
pub mod datagen;
pub mod diagnostics;
pub mod empirical;
pub mod error;
pub mod fregress;
pub mod io;
pub mod kernels;
pub mod mcmc;
pub mod stochastic;
pub mod summary;

pub use error::{Error, Result};
