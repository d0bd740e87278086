use thiserror::Error;

/// Invalid configuration: rejected before any simulation starts.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("clock period must be positive, got {0} ns")]
    NonPositiveClock(f64),
    #[error("negative duration {0} ns")]
    NegativeDuration(f64),
    #[error("unsupported density {0} Gb (expected 8, 16 or 32)")]
    UnknownDensity(u32),
    #[error("activation current must be positive, got {0} mA")]
    NonPositiveActCurrent(f64),
    #[error("geometry: {0}")]
    Geometry(&'static str),
    #[error("timing: {0}")]
    Timing(&'static str),
    #[error("currents: {0}")]
    Currents(&'static str),
    #[error("unknown refresh policy `{0}`")]
    UnknownPolicy(alloc::string::String),
    #[error("workload: {0}")]
    Workload(alloc::string::String),
}

/// Structural problems with a command, as opposed to "not yet issuable".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("command addressed to channel {got}, engine owns channel {owns}")]
    WrongChannel { got: u8, owns: u8 },
    #[error("rank {0} out of range")]
    RankOutOfRange(u8),
    #[error("bank {0} out of range")]
    BankOutOfRange(u8),
    #[error("row {0} out of range")]
    RowOutOfRange(u32),
    #[error("column {0} out of range")]
    ColumnOutOfRange(u16),
    #[error("subarray {subarray} does not hold row {row}")]
    SubarrayMismatch { subarray: u16, row: u32 },
}
