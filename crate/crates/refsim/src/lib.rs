//! Configuration files, trace and dump formats, the sweep runner and CSV
//! output around `refsim-core`. The `simulate` binary is a thin layer over
//! this library.

pub mod config;
pub mod csv;
pub mod io;
pub mod runner;

pub use config::{load_config, parse_config, SimConfig};
pub use runner::{run_sweep, RunError, RunOptions, SweepOutput};
