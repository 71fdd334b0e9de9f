use thiserror::Error;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("pmf length mismatch: {left} vs {right}")]
    PmfLengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coincident positions for devices {0} and {1} (zero distance)")]
    CoincidentPositions(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at round {round} (loss = {loss})")]
    Divergence { round: usize, loss: f64 },

    #[error("bound does not converge: A = {a_factor}")]
    NonConvergent { a_factor: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown scenario `{0}`; valid names: {1}")]
    UnknownScenario(String, String),

    #[error("comparison protocol mismatch: {0}")]
    ProtocolMismatch(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
