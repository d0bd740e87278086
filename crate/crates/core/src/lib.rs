//! Cycle-level DRAM memory-subsystem simulator for comparing refresh policies.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. Everything a
//! simulation needs lives here: DRAM organization and timing derivation, a
//! per-channel command timing engine with a brute-force checking oracle, an
//! FR-FCFS memory controller with write batching, the refresh policies
//! (all-bank, per-bank, elastic, DARP, SARP variants, FGR, adaptive), a
//! subarray-level refresh/access model, synthetic workloads with a simple
//! multi-core front end, and the metrics/energy post-processing.
//!
//! Config files, trace files, CSV output and the command line live in the
//! companion `refsim` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod audit;
pub mod controller;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod oracle;
pub mod refresh;
pub mod sarp;
pub mod system;
pub mod workload;

pub use error::{ConfigError, EngineError};
pub use geometry::{CurrentParams, DensityProfile, DramGeometry, FgrMode, RawTiming, RefreshScope, TimingParams};
pub use refresh::PolicyKind;

/// A count of DRAM command-clock cycles.
pub type Cycle = u64;
