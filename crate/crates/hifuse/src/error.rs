use std::io;

/// Crate-wide error type.
///
/// Variants are grouped into three classes that the CLI maps onto exit
/// codes: configuration errors (bad parameters, invalid config files),
/// data errors (malformed or inconsistent inputs) and numerical errors
/// (singular systems, non-finite values produced during computation).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input file exists but contains no usable rows.
    #[error("{path}: file is empty")]
    EmptyFile { path: String },

    /// CSV header does not match the expected layout.
    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: String, detail: String },

    /// A cell failed to parse or parsed to NaN/inf.
    #[error("{path}: non-finite or unparseable value at row {row}, column {col}")]
    NonFiniteValue { path: String, row: usize, col: String },

    /// Time column must be strictly increasing.
    #[error("{path}: time column not strictly increasing at row {row}")]
    NonMonotoneTime { path: String, row: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("numerical: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::EmptyFile { .. }
            | Error::MalformedHeader { .. }
            | Error::NonFiniteValue { .. }
            | Error::NonMonotoneTime { .. }
            | Error::Data(_)
            | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
