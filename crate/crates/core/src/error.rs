use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("pack_bits: element {index} is {value}, expected -1 or +1")]
    NotBinary { index: usize, value: f64 },

    #[error("derivation check failed for row {row}: full trace {full} vs closed form {closed} (rel err {rel_err:e})")]
    DerivationMismatch {
        row: usize,
        full: f64,
        closed: f64,
        rel_err: f64,
    },

    #[error("non-finite value at step {step} (layer {layer:?}): {detail}")]
    NonFinite {
        step: u64,
        layer: Option<usize>,
        detail: String,
    },

    #[error("invariant violated at step {step}, layer {layer}: {detail}")]
    Invariant {
        step: u64,
        layer: usize,
        detail: String,
    },

    #[error("{path}: bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: wrong IDX kind: expected {expected} file, found magic {found:#010x}")]
    WrongKind {
        path: PathBuf,
        expected: &'static str,
        found: u32,
    },

    #[error("{path}: truncated: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("{path}: count mismatch: {detail}")]
    CountMismatch { path: PathBuf, detail: String },

    #[error("{path}: label {label} at record {index} out of range for {classes} classes")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: u32,
        classes: usize,
    },

    #[error("checkpoint: bad magic {found:?}, expected \"RBON\"")]
    CheckpointMagic { found: [u8; 4] },

    #[error("checkpoint: unsupported version {found} (this build reads version {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint: truncated while reading {what}")]
    CheckpointTruncated { what: &'static str },

    #[error("checkpoint: record {index} invalid: {detail}")]
    CheckpointRecord { index: usize, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
