use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layer `{layer}`: {reason}")]
    InvalidLayer { layer: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("simulation fault: {0}")]
    Fault(String),

    #[error("no progress for {idle} cycles (stopped at cycle {cycle}): {detail}")]
    NonTermination { cycle: u64, idle: u64, detail: String },

    #[error("invariant violated at cycle {cycle}: {detail}")]
    Invariant { cycle: u64, detail: String },

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn layer(layer: &str, reason: impl Into<String>) -> Self {
        Error::InvalidLayer {
            layer: layer.to_string(),
            reason: reason.into(),
        }
    }
}
