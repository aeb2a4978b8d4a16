//! Four-state sleep/wake scoring from actigraphy.
//!
//! Covers the domain types, a seeded synthetic data generator, the sequential
//! and multi-task CNN classifiers plus an MLP baseline, evaluation metrics,
//! DTW/UPGMA day clustering and the file formats used by the CLI.

pub mod cluster;
pub mod error;
pub mod io;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod series;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
