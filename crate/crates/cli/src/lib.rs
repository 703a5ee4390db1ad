//! Command-line front end for the solver: TOML run configs, run
//! directories, and CSV/JSON exports.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

use slac_core::ExecMode;

/// Picks the execution mode for `--workers`. More than one worker sizes the
/// global rayon pool, which can only happen once per process.
pub fn exec_mode(workers: Option<usize>) -> ExecMode {
    match workers {
        None => ExecMode::Parallel,
        Some(w) => {
            #[cfg(feature = "parallel")]
            if w > 1 {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
                    log::warn!("worker count not applied: {e}");
                }
            }
            ExecMode::from_workers(w)
        }
    }
}
