//! Crate-wide error type.

use crate::kernel::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    /// Scheduling an event before the current clock signals a simulator bug.
    #[error("event scheduled in the past: now={now}, requested={requested}")]
    SchedulePast { now: SimTime, requested: SimTime },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborts as soon as the TD loss stops being finite.
    #[error("non-finite loss at training step {step}: {value}")]
    NonFiniteLoss { step: u64, value: f64 },

    #[error("trace parse error at line {line}: {message}")]
    TraceParse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
