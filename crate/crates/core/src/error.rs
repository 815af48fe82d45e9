use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("agent index {index} out of range for {count} agents")]
    InvalidIndex { index: usize, count: usize },

    #[error("duplicate agent id {id}")]
    DuplicateAgentId { id: u16 },

    #[error("degenerate geometry: zero-norm relative position between agents")]
    DegenerateGeometry,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("spawn infeasible: no valid placement after {attempts} attempts")]
    InfeasibleSpawn { attempts: u32 },

    #[error("metric undefined: {reason}")]
    UndefinedMetric { reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: unsupported format version {found} (reader supports {supported})")]
    VersionMismatch {
        path: PathBuf,
        found: u16,
        supported: u16,
    },

    #[error("{path}: truncated: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("training diverged: non-finite loss first observed in layer {layer}")]
    Divergence { layer: String },

    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
