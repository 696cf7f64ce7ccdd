// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("line {line}: duplicate neuron (layer {layer}, index {index})")]
    DuplicateNeuron { line: usize, layer: u32, index: u32 },

    #[error("embedding for {token:?} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        token: String,
        expected: usize,
        found: usize,
    },

    #[error("embedding for {token:?} is the zero vector")]
    ZeroVector { token: String },

    #[error("duplicate embedding row for {token:?}")]
    DuplicateToken { token: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("all pooled values are tied; rank statistics are undefined")]
    DegenerateTies,

    #[error("pooled variance is zero")]
    ZeroVariance,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("backend transport error: {0}")]
    BackendTransport(String),

    #[error("backend output could not be parsed: {0}")]
    BackendFormat(String),

    #[error("backend response failed validation: {0}")]
    BackendValidation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or invalid input data, as opposed
    /// to runtime failures (I/O, remote backends).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::DuplicateNeuron { .. }
                | Error::DimensionMismatch { .. }
                | Error::ZeroVector { .. }
                | Error::DuplicateToken { .. }
                | Error::Config { .. }
        )
    }
}
