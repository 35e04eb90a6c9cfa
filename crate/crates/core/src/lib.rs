//! Behavioral simulator for binary Bayesian neural networks whose weight
//! samples are drawn on the fly inside phase-change-memory crossbars.

pub mod calibration;
pub mod crossbar;
pub mod dataset;
pub mod device;
pub mod drift;
pub mod hw;
pub mod error;
pub mod inference;
pub mod lfsr;
pub mod metrics;
pub mod network;
pub mod reparam;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
