// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A modality span length was zero or the layout is otherwise malformed.
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    /// A token index fell outside `[0, prompt_len)`.
    #[error("token index {index} out of range for prompt of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// A scope resolved to no (layer, head) rows.
    #[error("scope selects no attention rows")]
    EmptyScope,

    /// A layer scope cannot be resolved against the model.
    #[error("invalid scope: {0}")]
    InvalidScope(String),

    /// An intervention spec violates its own invariants.
    #[error("invalid intervention spec: {0}")]
    InvalidSpec(String),

    /// Sweep templates must leave the scope unset.
    #[error("sweep template error: {0}")]
    SweepTemplate(String),

    /// Mismatched vector, tensor or sequence shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// A non-finite value appeared in an activation or gradient.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The vocabulary schema cannot support the requested generation.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Records could not be grouped into prompt pairs.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// A metric was asked for over no records.
    #[error("empty input")]
    EmptyInput,

    /// Ground-truth yes fraction of exactly 0 or 1 makes relative deltas undefined.
    #[error("degenerate ground-truth yes fraction {0}")]
    DegenerateGroundTruth(f64),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged { epoch: usize, step: usize },

    /// A file did not match its documented format.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure, tagged with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration rather than by
    /// the run itself. The CLI maps these to exit code 1.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidSpec(_)
                | Error::InvalidScope(_)
                | Error::SweepTemplate(_)
                | Error::InvalidLayout(_)
                | Error::Schema(_)
        )
    }
}

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;
