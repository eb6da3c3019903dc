//! Experiment harness around `msmc-core`: configuration, data generation,
//! ground truths, replicated comparisons, and their on-disk outputs.

pub mod compare;
pub mod config;
pub mod data;
pub mod output;
pub mod runs;
pub mod truth;

use std::path::PathBuf;

/// Output directory resolution: an explicit path wins, otherwise the
/// `MSMC_OUTPUT_DIR` environment variable, otherwise `./msmc-out`.
pub fn resolve_out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("MSMC_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("msmc-out"))
}
