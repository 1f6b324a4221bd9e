use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or infeasible configuration. `key` is a dotted path into the config tree.
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical error in round {round}, node {node}: {message}")]
    Numerical {
        round: usize,
        node: usize,
        message: String,
    },

    #[error("{path}: malformed IDX {field}: {message}")]
    Format {
        path: PathBuf,
        field: &'static str,
        message: String,
    },

    #[error(
        "partition capacity exceeded: class {class} needs {needed} more samples, {available} left"
    )]
    Capacity {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("all raw scores are zero under strategy `{strategy}`; weights are undefined")]
    DegenerateWeights { strategy: &'static str },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ (Error::Round { .. } | Error::Numerical { .. }) => e,
            e => Error::Round {
                round,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by the experiment description rather than by execution.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } | Error::Capacity { .. } | Error::Usage(_) => true,
            Error::Round { source, .. } => source.is_config(),
            _ => false,
        }
    }

    /// Process exit code for the CLI: 1 for configuration errors, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        if self.is_config() {
            1
        } else {
            2
        }
    }
}
