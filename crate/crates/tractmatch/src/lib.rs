//! Observational causal analysis of urban structures and crime.
//!
//! The crate reproduces a tract-level analysis pipeline end to end: raw
//! tract/crime/structure files are parsed and spatially joined, structure
//! counts are binarized into treatments, a weighted Euclidean distance metric
//! is learned over demographic covariates so that outcome-relevant ones
//! dominate, matched groups are formed by repeated cross-validation with
//! consensus and diameter pruning, and treatment effects are estimated as
//! differences in means over the matched groups. Around each treated
//! structure (and sampled control points) the pipeline also computes
//! localized crime-density curves over concentric radii, and it scans
//! covariates for treatment-effect heterogeneity.
//!
//! Start with [`synth::generate`] to build a synthetic city with known ground
//! truth, [`config::RunConfig`] to describe a run, and
//! [`pipeline::run_pipeline`] to execute one. The `examples/` directory has
//! one runnable example per capability; the thin `tractmatch` binary wraps
//! the same entry points as batch subcommands.

pub mod charts;
pub mod cli;
pub mod config;
pub mod csvio;
pub mod density;
pub mod error;
pub mod estimate;
pub mod geo;
pub mod ingest;
pub mod matching;
pub mod metric;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod treatment;

pub use error::{Error, Result};
