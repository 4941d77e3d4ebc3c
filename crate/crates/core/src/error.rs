//! Runtime error type shared by the streaming pipeline stages.

use thiserror::Error;

/// Errors raised while constructing or driving the recognition pipeline.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// A configuration field is out of range or internally inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An input vector had the wrong length for the stage consuming it.
    #[error("{stage}: dimension mismatch, expected {expected}, got {actual}")]
    DimMismatch {
        stage: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A NaN or infinity reached the given stage at the given frame.
    #[error("{stage}: non-finite value at frame {frame}")]
    NonFinite { stage: &'static str, frame: usize },

    /// A step size that must be strictly positive was not.
    #[error("discretize: step size must be positive, got {0}")]
    NonPositiveDelta(f32),

    /// A segment aggregate was requested over zero accumulated weight.
    #[error("aggregate: empty segment (no accumulated weight)")]
    EmptySegment,

    /// push/finalize was called on a stream that has already been finalized.
    #[error("{0}: stream already finalized")]
    Finalized(&'static str),

    /// A decoder snapshot was restored into a state it was not taken from.
    #[error("decoder: snapshot does not belong to this state")]
    SnapshotMismatch,

    /// The decoder ran past the end of its positional-encoding table.
    #[error("decoder: position {position} exceeds table of {limit} entries")]
    PositionOverflow { position: usize, limit: usize },

    /// Audio input could not be parsed or violated the format contract.
    #[error("audio: {0}")]
    Audio(String),

    /// A text input (emission log, alignment table) was malformed.
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
