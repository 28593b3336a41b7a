use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no client shards supplied")]
    NoShards,

    #[error("client {client} has an empty shard")]
    EmptyShard { client: usize },

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("local training diverged at step {step} (task {task}, client {client})")]
    Divergence { task: usize, client: usize, step: usize },

    #[error("non-finite aggregate for task {task} at round {round}")]
    NonFiniteAggregate { task: usize, round: u64 },

    #[error("event queue starved at t={time} before any stop condition was met")]
    Starved { time: f64 },

    #[error("client sampling exceeded {0} availability draws")]
    SamplingCapExceeded(u64),

    #[error("R/b ratio cap exceeded for task {task}: R={r}, b={b}, cap={cap}")]
    RatioCap { task: usize, r: usize, b: usize, cap: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error stems from user input rather than from the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidParameter(_)
                | Error::RatioCap { .. }
                | Error::DimensionMismatch { .. }
                | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
