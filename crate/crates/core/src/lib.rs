//! Hidden Markov random field multiple testing on masked 3D lattices.
//!
//! Latent null/non-null states follow a two-parameter Ising model on the
//! six-neighbour lattice; observed z statistics are N(0, 1) under the null
//! and a normal mixture otherwise. Parameters are estimated by a Monte Carlo
//! generalized EM, and hypotheses are ranked by their posterior null
//! probability (local index of significance, LIS) and thresholded with a
//! running-mean step-up rule.
//!
//! Modules:
//! - [`lattice`], [`gridio`]: geometry, fields and grid files
//! - [`ising`]: Ising conditionals, Gibbs samplers, exact enumeration
//! - [`emission`]: null/non-null densities, responsibilities, Welch t → z
//! - [`gem`]: parameter estimation and posterior summaries
//! - [`fdr`]: LIS/SLIS/PLIS, BH and local-FDR decisions, error metrics
//! - [`harness`]: replicated simulation studies
//! - [`pipeline`]: ingestion and analysis workflows behind the CLI

pub mod emission;
pub mod fdr;
pub mod error;
pub mod gem;
pub mod gridio;
pub mod harness;
pub mod ising;
pub mod lattice;
pub mod pipeline;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
