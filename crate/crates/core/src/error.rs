use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error in `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("non-finite {loss} at epoch {epoch}, step {step}")]
    NumericalAbort {
        loss: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
