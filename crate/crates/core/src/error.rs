use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config field `{field}`: {message}")]
    Validation { field: &'static str, message: String },

    #[error("ingestion error in {file}: {message}")]
    Ingest { file: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite activation in {network} layer {layer} ({kind})")]
    NumericFault { network: String, layer: usize, kind: &'static str },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("gradient attempted to cross the {link} link; inter-node feedback is forbidden")]
    FeedbackViolation { link: String },

    #[error("unexpected link traffic during node-local training at node {node}")]
    UnexpectedLinkTraffic { node: String },

    #[error("training fault at step {step}: {message}")]
    TrainingFault { step: u64, message: String },

    #[error("training diverged at step {step} after {consecutive} consecutive bad steps")]
    Divergence { step: u64, consecutive: u32 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
