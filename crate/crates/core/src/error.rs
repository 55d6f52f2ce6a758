use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Gradient payload cannot be serialized (NaN/Inf or malformed frame).
    #[error("payload error: {0}")]
    Payload(String),
    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),
    /// Channel state unusable for detection.
    #[error("channel error: {0}")]
    Channel(String),
    /// Model or tensor shape mismatch.
    #[error("spec error: {0}")]
    Spec(String),
    /// A codeword exceeded the retransmission budget.
    #[error("link failure: block {block} not delivered after {attempts} attempts")]
    LinkFailure { block: usize, attempts: usize },
    /// Bound verification requested outside the conditions the bound holds under.
    #[error("assumption violation: {0}")]
    Assumption(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
