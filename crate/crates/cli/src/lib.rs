//! Command implementations for the `covomix` binary.

pub mod config;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod prepare;
pub mod quantize;
pub mod synth;
pub mod toy;
pub mod train;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// Sizes the global rayon pool; 0 keeps rayon's default. Later calls are
/// ignored once the pool exists.
pub fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}
