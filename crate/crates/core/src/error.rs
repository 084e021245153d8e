//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T, E = HrmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HrmError {
    /// Invalid configuration or argument (bad dimensions, out-of-range weights, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Rejection sampling exhausted its attempt budget.
    #[error("generation error: accepted {accepted} of {requested} samples after {attempts} attempts (r = {r})")]
    Generation {
        requested: usize,
        accepted: usize,
        attempts: usize,
        r: f64,
    },

    /// The objective became non-finite during training.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    /// Structurally invalid input data.
    #[error("data error: {0}")]
    Data(String),

    /// An error annotated with the outer HRM round that produced it.
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<HrmError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl HrmError {
    pub fn config(msg: impl Into<String>) -> Self {
        HrmError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        HrmError::Data(msg.into())
    }

    /// Strips any round annotations.
    pub fn root(&self) -> &HrmError {
        match self {
            HrmError::Round { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the CLI: 2 for configuration/input problems,
    /// 3 for training failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            HrmError::Training { .. } => 3,
            _ => 2,
        }
    }
}
