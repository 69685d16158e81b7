use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {num_states} output units")]
    LabelOutOfRange { label: usize, num_states: usize },

    #[error("lattice {utt}: {msg}")]
    InvalidLattice { utt: String, msg: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("update failed: {0}")]
    FailedUpdate(String),

    #[error("{0}")]
    Worker(String),

    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            msg: err.to_string(),
        }
    }

    /// Short machine-readable tag used by the command line front-end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension",
            Error::InvalidModel(_) => "model",
            Error::NonFinite(_) => "non_finite",
            Error::LabelOutOfRange { .. } => "label",
            Error::InvalidLattice { .. } => "lattice",
            Error::Parse { .. } => "parse",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::FailedUpdate(_) => "failed_update",
            Error::Worker(_) => "worker",
            Error::Io { .. } => "io",
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
