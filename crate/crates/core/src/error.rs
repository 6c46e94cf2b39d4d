use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shape list printed as `[2, 3, 4]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[usize]> for Shape {
    fn from(s: &[usize]) -> Self {
        Shape(s.to_vec())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("invalid threshold ladder {taus:?}: {msg}")]
    InvalidLadder { taus: Vec<f64>, msg: String },

    #[error("routing row is not on the simplex (sum {sum}, min {min})")]
    NotSimplex { sum: f64, min: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("parameters: {0}")]
    Params(String),

    #[error("ften: bad magic")]
    BadMagic,

    #[error("ften: unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("ften: truncated payload while reading {0}")]
    Truncated(&'static str),

    #[error("ften: duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("ften: invalid tensor name {0:?}")]
    InvalidName(String),

    #[error("ften: unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("ften: {0}")]
    Malformed(String),

    #[error("missing tensor {0:?}")]
    MissingTensor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    /// True for failures of the operating system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
