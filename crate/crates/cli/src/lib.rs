//! Experiment driver around `varassim-core`: a TOML-configured pipeline that
//! generates a synthetic dataset, trains the configured reconstruction
//! models, applies them to the held-out test period, scores everything
//! against the truth, and renders comparison maps.
//!
//! The binary in this package is a thin argument-parsing layer; the actual
//! stage logic lives in [`pipeline`], the configuration schema in [`config`],
//! and the canned experiment setups in [`presets`].

pub mod config;
pub mod pipeline;
pub mod presets;
