use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {edge} is degenerate: current length {length:e} m")]
    DegenerateEdge { edge: usize, length: f64 },

    #[error("sparsity rule leaves no measured node ({nodes} nodes at {percent}%)")]
    AllUnmeasured { nodes: usize, percent: f64 },

    #[error("degenerate triangulation input: {0}")]
    DegenerateInput(String),

    #[error("passband upper edge {omega_hi} rad/s exceeds the Nyquist rate {nyquist} rad/s")]
    BandOutsideNyquist { omega_hi: f64, nyquist: f64 },

    #[error("state diverged at step {step} (magnitude {magnitude:e})")]
    Diverged { step: usize, magnitude: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-positive residual variance {variance} at channel {channel}")]
    NonpositiveVariance { channel: usize, variance: f64 },

    #[error("loss became non-finite at epoch {epoch}")]
    NonfiniteLoss { epoch: usize },

    #[error("innovation covariance is singular (condition number {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("reference signal has zero norm (node {node}, direction {direction})")]
    ZeroReference { node: usize, direction: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
