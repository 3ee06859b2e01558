use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two extents that must agree do not.
    #[error("{op}: {what} mismatch: expected {expected}, got {got}")]
    Dim {
        op: &'static str,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A shape that is malformed for the operation.
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    Shape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("backward root must hold a single element, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("checkpoint: bad magic")]
    BadMagic,
    #[error("checkpoint: unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint: truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint: tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    TensorShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint: unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error("checkpoint: missing tensor `{0}`")]
    MissingTensor(String),
    #[error("checkpoint: malformed record: {0}")]
    Malformed(String),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            reason: reason.into(),
        }
    }
}
