//! File formats, configuration handling, and the command implementations
//! behind the `tripletloc` binary: dataset generation, two-stage training,
//! perturbation, evaluation, and report aggregation for hierarchical indoor
//! place recognition. The numeric pipeline lives in `tripletloc-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod pgm;
pub mod seeds;
