//! Normalized steepest descent (NSD), normalized momentum descent (NMD) and
//! Adam without a stability constant for multiclass linear classification,
//! over entry-wise and Schatten matrix p-norms.
//!
//! The crate also ships the tools to check where those optimizers end up:
//! max-margin oracles per norm, a synthetic data generator and an experiment
//! harness that logs margin gaps and verifies the proxy-function
//! inequalities the convergence analysis rests on.

pub mod datagen;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod margins;
pub mod norms;
pub mod optimizers;

pub use error::{Error, Result};
pub use norms::{Exponent, Matrix, NormFamily, NormSpec, SvdFactors};
