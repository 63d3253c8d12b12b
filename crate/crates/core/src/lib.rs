//! Posterior-informed neural emulation of ODE models.
//!
//! The pipeline calibrates physical parameters with a DRAM sampler, draws
//! training data from the resulting chain, and fits two emulators on it: a
//! quantile network predicting 90% predictive intervals and an
//! attention-based trajectory emulator (AEODE). The `measures` module checks
//! the Wasserstein risk-shift bounds that justify training on the chain.

pub mod aeode;
pub mod datasets;
pub mod error;
pub mod io;
pub mod mcmc;
pub mod measures;
pub mod metrics;
pub mod nn;
pub mod quantile;
pub mod odes;
pub mod rng;
pub mod theory;

pub use error::{MineError, Result};
