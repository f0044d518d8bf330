//! Weakly disentangled representation learning.
//!
//! An adversarial autoencoder shapes its latent space with a Gaussian-mixture
//! prior whose components correspond to factor combinations, and a
//! relational network learns to move codes between components according to
//! named relations.

pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod factors;
pub mod networks;
pub mod nn;
pub mod prior;
pub mod training;

pub use error::{Error, Result};
