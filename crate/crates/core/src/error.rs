use std::path::PathBuf;

use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("topology is disconnected: node {0} cannot reach the sink")]
    DisconnectedTopology(NodeId),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("duty cycle must be in (0, 1], got {0}")]
    InvalidDutyCycle(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
