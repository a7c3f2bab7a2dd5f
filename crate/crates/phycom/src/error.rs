//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by simulation, compensation and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (unsupported constellation order,
    /// inconsistent pilot counts, bad scenario fields, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Vector/matrix dimensions do not match what an operation expects.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The layer family is not closed under inversion; there is no
    /// parameter-space reverse map.
    #[error("{0} layer has no isomorphic reverse map")]
    NotIsomorphic(&'static str),

    /// A layer transfer cannot be inverted at the current parameters.
    /// `magnitude` is the offending pivot (|h0| for FIR, |det| for IQ).
    #[error("singular {kind} layer (pivot magnitude {magnitude:.3e})")]
    SingularLayer {
        kind: &'static str,
        magnitude: f64,
    },

    /// The optimizer could not make progress.
    #[error("training failed: {0}")]
    Training(String),

    /// A scenario file could not be parsed.
    #[error("scenario parse error (line {line}): {msg}")]
    ScenarioParse { line: usize, msg: String },

    /// Too many Monte-Carlo trials failed for the aggregate to be trusted.
    #[error("benchmark failed: {0}")]
    Benchmark(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
