use std::fmt;

/// Errors raised by the workbench.
#[derive(Debug)]
pub enum Error {
    /// Approach index outside the intersection.
    UnknownApproach(usize),
    /// Two conflicting approaches were asked to show green together.
    SafetyViolation { first: usize, second: usize },
    /// An action was applied while the rule checker marks it invalid.
    RuleViolation { action: &'static str, reason: String },
    /// Encoder matrix size other than 80 or 24.
    UnsupportedSize(usize),
    /// Tensor or parameter shape does not match the network spec.
    ShapeMismatch(String),
    /// Loss or gradient became NaN or infinite.
    NonFiniteLoss { step: u64, detail: String },
    /// Webster inputs with total flow ratio at or above one.
    Oversaturated(f64),
    /// Invalid configuration value.
    Config(String),
    Io(std::io::Error),
    Json(serde_json::Error),
    Csv(csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnknownApproach(a) => write!(f, "unknown approach id {a}"),
            Error::SafetyViolation { first, second } => {
                write!(f, "conflicting greens on approaches {first} and {second}")
            }
            Error::RuleViolation { action, reason } => {
                write!(f, "action {action} rejected by rule checker: {reason}")
            }
            Error::UnsupportedSize(s) => write!(f, "unsupported state matrix size {s} (expected 80 or 24)"),
            Error::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Error::NonFiniteLoss { step, detail } => {
                write!(f, "non-finite loss at train step {step}: {detail}")
            }
            Error::Oversaturated(y) => write!(f, "oversaturated intersection: flow ratio sum {y:.4} >= 1"),
            Error::Config(m) => write!(f, "invalid configuration: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
            Error::Csv(e) => write!(f, "csv error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            Error::Csv(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e)
    }
}
