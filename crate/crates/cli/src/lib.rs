//! The `readlm` pipeline: preprocess, train, synthesize, analyze, compare.
//!
//! Stages talk to each other only through files under the configured output
//! directory, so any stage can be rerun on its own.

pub mod analyze;
pub mod compare;
pub mod config;
pub mod preprocess;
mod surprisal;
pub mod synthesize;
pub mod toy_data;
pub mod train;

pub use config::{Architecture, Layout, Overrides, PipelineConfig};

use readlm_core::{Error, Result};

pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))
}

/// Process exit status for a failed stage.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}
