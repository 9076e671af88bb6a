use thiserror::Error;

/// Errors raised by the detection engine and its helpers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("invalid class probabilities: {0}")]
    InvalidProbs(String),

    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),

    /// `C` is too small for the overlapping detection mass in this frame.
    #[error(
        "non-positive evidence {value} for class {class} at frame {frame}; \
         increase C above the overlapping detection mass of this stream"
    )]
    NonPositiveEvidence { frame: u64, class: usize, value: f64 },

    #[error("frame gap: expected frame {expected}, got {found}")]
    FrameGap { expected: u64, found: u64 },

    #[error("class count mismatch at frame {frame}: expected {expected} probabilities, got {found}")]
    ClassCountMismatch {
        frame: u64,
        expected: usize,
        found: usize,
    },

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("malformed input at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
