use thiserror::Error;

use crate::circuit::ValidationReport;

/// Errors raised by circuit construction, evaluation, learning and I/O.
#[derive(Debug, Error)]
pub enum PcError {
    #[error("value {value} for variable {var} is outside its domain of size {domain}")]
    Domain { var: usize, value: u32, domain: usize },

    #[error("evidence has {got} variables, circuit has {expected}")]
    EvidenceLength { got: usize, expected: usize },

    #[error("head {head} out of range (circuit has {num_heads} heads)")]
    HeadOutOfRange { head: usize, num_heads: usize },

    #[error("circuit failed structural validation: {0}")]
    Structure(ValidationReport),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample {sample} has zero likelihood under its head")]
    ZeroLikelihood { sample: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PcError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        PcError::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        PcError::Parse {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PcError>;
