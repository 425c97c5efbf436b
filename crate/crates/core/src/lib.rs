//! GAN ensembles as a source of synthetic training data, on the 2D-grid
//! mixture-of-Gaussians benchmark.

pub mod data;
pub mod downstream;
pub mod ensemble;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
