//! File formats: epoch series, checkpoints, run configuration and reports.

pub mod atomic;
pub mod checkpoint;
pub mod config;
pub mod report;
pub mod series_file;

pub use atomic::{write_atomic, write_bytes, write_string};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::RunConfig;
pub use series_file::{load_series, read_series, save_series, write_series};
