//! Kernel-logistic-regression Hopfield networks and the Fisher information
//! geometry of their learned weights.
//!
//! - [`kernel`]: bipolar pattern sets, the RBF kernel and Gram matrices.
//! - [`klr`]: the per-neuron logistic model, its loss and gradient descent trainer.
//! - [`infogeo`]: Fisher matrices, spectra, stable rank and natural gradients.
//! - [`dynamics`]: synchronous recall from (corrupted) cues.
//! - [`sweep`]: phase diagrams over kernel width and load, CSV and SVG output.
//! - [`cli`]: the `kfim` command-line driver.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod infogeo;
pub mod kernel;
pub mod klr;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};
