//! Crate-wide error type with a stable category string and process exit code
//! for every failure class the CLI can surface.
//!
//! The contract for command-line consumers: every error maps to exactly one
//! machine-parsable category (printed as `error: <category>: <message>`) and
//! one exit code — 2 for data/configuration problems, 3 for compatibility
//! problems (checkpoint/spec mismatches), 4 for numerical divergence, 1 for
//! internal invariant violations that should never occur in normal use.

use std::path::PathBuf;
use thiserror::Error;

/// Every failure the library can produce.
#[derive(Debug, Error)]
pub enum Error {
    /// Two matrices were combined with incompatible shapes.
    #[error("{op}: incompatible shapes {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A matrix was constructed with a data length that does not match its
    /// declared dimensions.
    #[error("matrix {rows}x{cols} requires {expected} elements, got {actual}")]
    BadDimensions {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },

    /// An operation that requires finite input received NaN or infinity.
    #[error("{op}: non-finite value at ({row}, {col})")]
    NonFinite {
        op: &'static str,
        row: usize,
        col: usize,
    },

    /// An unknown activation-function identifier was requested.
    #[error("unknown activation function id `{0}` (expected `identity` or `relu`)")]
    UnknownActivation(String),

    /// A configuration value (CLI flag, config file key, or layer spec field)
    /// is missing, malformed, or inconsistent with the others.
    #[error("{0}")]
    ConfigInvalid(String),

    /// A data file or directory does not exist.
    #[error("{}", .0.display())]
    DataNotFound(PathBuf),

    /// A data file exists but could not be parsed.
    #[error("{}:{line}: {msg}", .path.display())]
    DataParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Parsed data violates a semantic requirement (bad label value, missing
    /// day, too few events, ...).
    #[error("{0}")]
    DataInvalid(String),

    /// A checkpoint file declares an unsupported format version.
    #[error("checkpoint format `{found}` not supported (expected `{expected}`)")]
    CheckpointVersion { found: String, expected: String },

    /// A checkpoint file failed its checksum or structural validation.
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    /// A checkpoint is valid but incompatible with the requested network or
    /// dataset shapes.
    #[error("{0}")]
    SpecMismatch(String),

    /// Training produced a non-finite loss or gradient.
    #[error("numerical divergence at epoch {epoch}, batch {batch}: {msg}")]
    Divergence {
        epoch: u32,
        batch: usize,
        msg: String,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable one-word category for machine-parsable error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::BadDimensions { .. } => "shape_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::UnknownActivation(_) | Error::ConfigInvalid(_) => "config_invalid",
            Error::DataNotFound(_) => "data_not_found",
            Error::DataParse { .. } => "data_parse",
            Error::DataInvalid(_) => "data_invalid",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::CheckpointCorrupt(_) => "checkpoint_corrupt",
            Error::SpecMismatch(_) => "spec_mismatch",
            Error::Divergence { .. } => "divergence",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code for the CLI: 2 data/config, 3 compatibility,
    /// 4 divergence, 1 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownActivation(_)
            | Error::ConfigInvalid(_)
            | Error::DataNotFound(_)
            | Error::DataParse { .. }
            | Error::DataInvalid(_)
            | Error::Io(_) => 2,
            Error::CheckpointVersion { .. }
            | Error::CheckpointCorrupt(_)
            | Error::SpecMismatch(_) => 3,
            Error::Divergence { .. } => 4,
            Error::ShapeMismatch { .. } | Error::BadDimensions { .. } | Error::NonFinite { .. } => {
                1
            }
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_and_exit_codes_are_consistent() {
        let cases: Vec<(Error, &str, i32)> = vec![
            (
                Error::DataNotFound(PathBuf::from("/missing")),
                "data_not_found",
                2,
            ),
            (
                Error::ConfigInvalid("bad".into()),
                "config_invalid",
                2,
            ),
            (
                Error::SpecMismatch("shapes".into()),
                "spec_mismatch",
                3,
            ),
            (
                Error::CheckpointCorrupt("checksum".into()),
                "checkpoint_corrupt",
                3,
            ),
            (
                Error::Divergence {
                    epoch: 3,
                    batch: 7,
                    msg: "loss is NaN".into(),
                },
                "divergence",
                4,
            ),
        ];
        for (err, category, code) in cases {
            assert_eq!(err.category(), category);
            assert_eq!(err.exit_code(), code);
        }
    }

    #[test]
    fn messages_name_the_offending_shapes() {
        let err = Error::ShapeMismatch {
            op: "matmul",
            lhs_rows: 2,
            lhs_cols: 3,
            rhs_rows: 4,
            rhs_cols: 5,
        };
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
        assert!(msg.contains("4x5"), "{msg}");
    }
}
