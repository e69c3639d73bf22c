use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{what} = {value} outside covered range [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },

    #[error("blow-up at time {time}: sup norm {linf}")]
    BlowUp { time: f64, linf: f64 },

    #[error("bundle member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("condition failure: {0}")]
    Condition(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("I/O error at {path}: {message}")]
    Io { path: String, message: String },

    #[error("malformed input: {0}")]
    Format(String),
}

impl Error {
    /// True when the error (or the member error it wraps) is a numerical blow-up.
    pub fn is_blow_up(&self) -> bool {
        match self {
            Error::BlowUp { .. } | Error::NonFinite { .. } => true,
            Error::Member { source, .. } => source.is_blow_up(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
