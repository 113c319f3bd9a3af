//! Trainable multimodal variational inversion of sparse altimetry.
//!
//! The library reconstructs gridded space-time sea surface height (SSH) from
//! sparse along-track samples, optionally informed by dense sea surface
//! temperature (SST), by minimizing a trainable variational cost with a
//! learned iterative solver. It ships a synthetic observing-system experiment
//! (truth generation, sampling masks, windowing), classical baselines
//! (optimal interpolation, a direct convolutional regressor, a spectral SST
//! complement), and a spectral evaluation suite.

pub mod autodiff;
pub mod baselines;
pub mod conv;
pub mod cost;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod ncio;
pub mod obs_ops;
pub mod osse;
pub mod params;
pub mod plotting;
pub mod prior;
pub mod solver;
pub mod spectral;
pub mod state;
pub mod train;

pub use error::{Error, Result};
