use std::fmt;

/// Errors surfaced by the registration engine.
#[derive(Debug)]
pub enum Error {
    /// Elementwise or correlation operands disagree in shape.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An extent is not a power of two where the FFT path requires it.
    NotPowerOfTwo { op: &'static str, shape: Vec<usize> },
    /// Invalid argument (non-positive temperature, empty list, bad range...).
    InvalidArgument { op: &'static str, msg: String },
    /// Input carries no usable signal (constant or all-zero feature map).
    NoSignal { stage: &'static str },
    /// A registration stage failed; wraps the underlying error.
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
    /// Training diverged (non-finite loss or gradient).
    Diverged { step: usize, detail: String },
    /// Checkpoint or dataset file is malformed.
    Format { path: String, msg: String },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            Error::NotPowerOfTwo { op, shape } => write!(
                f,
                "{op}: extents {shape:?} must be powers of two; resize the input \
                 (the CLI resizes to the nearest configured power of two)"
            ),
            Error::InvalidArgument { op, msg } => write!(f, "{op}: {msg}"),
            Error::NoSignal { stage } => write!(f, "{stage}: no signal (constant input)"),
            Error::Stage { stage, source } => write!(f, "stage '{stage}' failed: {source}"),
            Error::Diverged { step, detail } => {
                write!(f, "training diverged at step {step}: {detail}")
            }
            Error::Format { path, msg } => write!(f, "{path}: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Stage { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
